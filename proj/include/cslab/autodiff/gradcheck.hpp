#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cslab/autodiff/ops.hpp"

namespace cslab::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

using LossFn = std::function<Var<double>(std::span<const Var<double>>)>;

// Compares backward() against central differences for every coordinate of every
// parameter. Relative error is |a - n| / max(1e-8, |a| + |n|). A coordinate whose ±eps
// evaluations see different relu sign patterns straddles a kink and is skipped.
GradCheckResult grad_check(const LossFn& f, std::span<const Tensor<double>> params, double eps = 1e-5);

}  // namespace cslab::ad
