#include "avatar/common.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

namespace avatar {

namespace {
std::atomic<int> g_max_threads{0};
}

void set_max_threads(int n) { g_max_threads = std::max(0, n); }

int max_threads() {
  int n = g_max_threads.load();
  if (n > 0) return n;
  return std::max(1u, std::thread::hardware_concurrency());
}

int parallel_chunks(std::int64_t n) {
  if (n <= 0) return 0;
  return static_cast<int>(std::min<std::int64_t>(max_threads(), n));
}

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  parallel_for_chunks(n, [&](int, std::int64_t b, std::int64_t e) { fn(b, e); });
}

void parallel_for_chunks(std::int64_t n,
                         const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
  const int chunks = parallel_chunks(n);
  if (chunks == 0) return;
  if (chunks == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(chunks);
  workers.reserve(chunks - 1);
  auto run = [&](int c) {
    try {
      fn(c, n * c / chunks, n * (c + 1) / chunks);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  for (int c = 1; c < chunks; ++c) workers.emplace_back(run, c);
  run(0);
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace avatar
