#include "cslab/autodiff/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cslab::ad {

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               const AdamConfig& cfg, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params and grads differ in count");
  if (state.m.empty()) {
    for (const Tensor<T>* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match params");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    const Tensor<T>* g = grads[k];
    if (g != nullptr && !g->empty() && !g->same_shape(p)) {
      throw std::invalid_argument("adam_step: gradient shape " + g->shape_str() + " vs param " + p.shape_str());
    }
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = (g == nullptr || g->empty()) ? 0.0 : static_cast<double>((*g)[i]);
      double w = static_cast<double>(p[i]);
      w -= lr * cfg.weight_decay * w;
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      p[i] = static_cast<T>(w);
    }
  }
}

double warmup_cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup, double peak_lr) {
  if (warmup > 0 && step < warmup) return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::int64_t span = std::max<std::int64_t>(1, total_steps - warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>* const>, AdamState<float>&,
                        const AdamConfig&, double);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>* const>,
                        AdamState<double>&, const AdamConfig&, double);

}  // namespace cslab::ad
