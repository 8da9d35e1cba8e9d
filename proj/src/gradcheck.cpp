#include "cslab/autodiff/gradcheck.hpp"

#include <cmath>

#include "cslab/util.hpp"

namespace cslab::ad {

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const LossFn& f, const std::vector<Tensor<double>>& params) {
  std::vector<Var<double>> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(constant(p));
  KinkProbe probe;
  const double v = f(leaves)->value.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return {v, probe.signature()};
}

}  // namespace

GradCheckResult grad_check(const LossFn& f, std::span<const Tensor<double>> params, double eps) {
  std::vector<Var<double>> leaves;
  for (const auto& p : params) leaves.push_back(leaf(p, true));
  const Var<double> loss = f(leaves);
  if (!std::isfinite(loss->value.item())) throw NumericError("grad_check: non-finite loss");
  backward(loss);

  GradCheckResult result;
  std::vector<Tensor<double>> probe(params.begin(), params.end());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const Tensor<double>& analytic = leaves[k]->grad;
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double a = analytic.empty() ? 0.0 : analytic[i];
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite analytic gradient");
      const double orig = probe[k][i];
      probe[k][i] = orig + eps;
      const Evaluation plus = evaluate(f, probe);
      probe[k][i] = orig - eps;
      const Evaluation minus = evaluate(f, probe);
      probe[k][i] = orig;
      if (plus.signature != minus.signature) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * eps);
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace cslab::ad
