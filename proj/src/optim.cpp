#include "avatar/optim.hpp"

#include <cmath>

#include "avatar/common.hpp"

namespace avatar {

namespace {

template <typename GetGrad, typename Apply>
void adam_core(size_t count, GetGrad get_grad, Apply apply, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != count) {
    state.m.assign(count, {});
    state.v.assign(count, {});
    state.step = 0;
  }
  for (size_t i = 0; i < count; ++i) {
    auto g = get_grad(i);
    for (auto x : g)
      if (!std::isfinite(static_cast<double>(x))) throw NumericalError("non-finite gradient in Adam step");
    if (state.m[i].size() != g.size()) {
      state.m[i].assign(g.size(), 0.0f);
      state.v[i].assign(g.size(), 0.0f);
    }
  }
  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < count; ++i) {
    auto g = get_grad(i);
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < g.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      apply(i, j, cfg.lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps));
    }
  }
}

}  // namespace

void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg) {
  adam_core(
      params.size(), [&](size_t i) { return params[i].grad(); },
      [&](size_t i, size_t j, double delta) {
        auto& node = params[i].node();
        node.values[j] = static_cast<float>(node.values[j] - delta);
      },
      state, cfg);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient length mismatch");
  adam_core(
      1, [&](size_t) { return grads; }, [&](size_t, size_t j, double delta) { params[j] -= delta; }, state,
      cfg);
}

void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (float g : p.grad()) sq += double(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const float k = static_cast<float>(max_norm / norm);
    for (auto& p : params)
      for (auto& g : p.mutable_grad()) g *= k;
  }
  return norm;
}

}  // namespace avatar
