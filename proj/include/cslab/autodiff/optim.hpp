#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cslab/autodiff/tensor.hpp"

namespace cslab::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;
};

// Decoupled weight decay: param <- param - lr*wd*param, then the bias-corrected Adam
// update. Empty gradients count as zero.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               const AdamConfig& cfg, double lr);

// Linear warmup to peak_lr over warmup steps, then cosine decay to zero at total_steps.
double warmup_cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup, double peak_lr);

}  // namespace cslab::ad
