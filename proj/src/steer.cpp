#include "cslab/steer.hpp"

#include <cmath>

namespace cslab::steer {

template <typename T>
std::vector<T> ablate(std::span<const T> x, std::span<const T> d, T lambda) {
  if (x.size() != d.size()) throw ValidationError("ablate: residual and direction widths differ");
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lambda * d[i];
  return out;
}

template std::vector<float> ablate(std::span<const float>, std::span<const float>, float);
template std::vector<double> ablate(std::span<const double>, std::span<const double>, double);

void ablate_in_place(std::span<float> x, std::span<const float> d, float lambda) {
  if (x.size() != d.size()) throw ValidationError("ablate: residual and direction widths differ");
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lambda * d[i];
}

std::string_view to_string(PositionPolicy p) {
  return p == PositionPolicy::all_generated ? "all_generated" : "trigger_on_preact";
}

PositionPolicy parse_position_policy(std::string_view s) {
  if (s == "all_generated") return PositionPolicy::all_generated;
  if (s == "trigger_on_preact") return PositionPolicy::trigger_on_preact;
  throw ValidationError("unknown position policy: " + std::string(s));
}

void AblationSpec::validate(const sae::SaeParams<float>& sae) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("ablation: lambda must be finite and >= 0");
  if (layer_index != sae.layer_index) {
    throw ValidationError("ablation: layer " + std::to_string(layer_index) + " but the SAE reads layer " +
                          std::to_string(sae.layer_index));
  }
  if (feature >= sae.features()) throw ValidationError("ablation: feature out of range");
}

lm::Intervention make_intervention(const sae::SaeParams<float>& sae, const AblationSpec& spec,
                                   std::size_t first_position) {
  spec.validate(sae);
  const auto dir = sae::feature_direction(sae, spec.feature);
  const auto lambda = static_cast<float>(spec.lambda);
  if (spec.policy == PositionPolicy::all_generated) {
    return {spec.layer_index, first_position,
            [dir, lambda](std::size_t, std::span<float> x) { ablate_in_place(x, dir, lambda); }};
  }
  const auto enc = sae.w_enc.row(spec.feature);
  std::vector<float> w(enc.begin(), enc.end());
  const double b = sae.b_enc[spec.feature];
  const double threshold = spec.trigger_threshold;
  return {spec.layer_index, first_position, [dir, lambda, w, b, threshold](std::size_t, std::span<float> x) {
            double f = b;
            for (std::size_t i = 0; i < x.size(); ++i) f += static_cast<double>(w[i]) * x[i];
            if (f > threshold) ablate_in_place(x, dir, lambda);
          }};
}

std::vector<std::vector<TokenId>> generate_with_ablation(const lm::LmParams<float>& lm,
                                                         const sae::SaeParams<float>& sae, const AblationSpec& spec,
                                                         std::span<const eval::Prompt> prompts,
                                                         const lm::DecodeConfig& decode, std::uint64_t seed) {
  if (prompts.empty()) return {};
  std::vector<std::vector<TokenId>> inputs;
  for (const auto& p : prompts) {
    if (p.tokens.size() != prompts[0].tokens.size()) throw ValidationError("ablation: prompts differ in length");
    if (p.tokens.empty()) throw ValidationError("ablation: empty prompt");
    inputs.push_back(p.tokens);
  }
  const auto iv = make_intervention(sae, spec, inputs[0].size() - 1);
  return lm::generate(lm, inputs, decode, seed, &iv);
}

std::vector<SweepRow> ablation_sweep(const lm::LmParams<float>& lm, const sae::SaeParams<float>& sae,
                                     std::span<const SweepFeature> features, std::span<const double> lambdas,
                                     std::span<const eval::Prompt> prompts, const Vocabulary& vocab,
                                     const ScriptRegistry& registry, const LanguageId& lang,
                                     const lm::DecodeConfig& decode, std::uint64_t seed, PositionPolicy policy,
                                     double trigger_threshold) {
  if (lambdas.size() < 2) throw ValidationError("ablation sweep: need at least two lambda values");
  std::vector<SweepRow> rows;
  for (const auto& feat : features) {
    for (double lambda : lambdas) {
      const AblationSpec spec{sae.layer_index, feat.feature, lambda, policy, trigger_threshold};
      const auto responses = generate_with_ablation(lm, sae, spec, prompts, decode, seed);
      std::vector<bool> flags;
      for (const auto& r : responses) flags.push_back(eval::switched(vocab, registry, lang, r));
      const auto rep = eval::cs_report(lang, std::move(flags));
      rows.push_back({feat.role, lambda, rep.n_prompts, rep.n_switched, rep.ratio});
    }
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "feature_role,lambda,n_prompts,n_switched,cs_ratio\n";
  for (const auto& r : rows) {
    out += r.feature_role + "," + format_double(r.lambda) + "," + std::to_string(r.n_prompts) + "," +
           std::to_string(r.n_switched) + "," + format_double(r.cs_ratio) + "\n";
  }
  return out;
}

}  // namespace cslab::steer
