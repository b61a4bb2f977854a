#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace avatar {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;

using Vec2d = Eigen::Vector2d;
using Vec3d = Eigen::Vector3d;
using Vec3f = Eigen::Vector3f;
using Mat2d = Eigen::Matrix2d;
using Mat3d = Eigen::Matrix3d;
using Mat4d = Eigen::Matrix4d;
using Quatd = Eigen::Quaterniond;

inline constexpr double kPi = std::numbers::pi;

/// splitmix64 of the pair; derives independent sub-seeds from one seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Error classes. The CLI maps each family onto a distinct exit code.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Global cap on worker threads used by parallel kernels (0 = hardware).
void set_max_threads(int n);
int max_threads();

/// Runs fn(begin, end) over a static partition of [0, n). Partition depends
/// only on n and the thread cap, so results are reproducible for a fixed cap.
void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

/// Same partition, also passing the chunk index (0 .. parallel_chunks(n)-1).
void parallel_for_chunks(std::int64_t n,
                         const std::function<void(int, std::int64_t, std::int64_t)>& fn);

/// Number of chunks parallel_for will use for n items.
int parallel_chunks(std::int64_t n);

}  // namespace avatar
