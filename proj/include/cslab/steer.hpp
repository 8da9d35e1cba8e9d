#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cslab/eval.hpp"
#include "cslab/microlm.hpp"
#include "cslab/sae.hpp"

namespace cslab::steer {

// x' = x - lambda·d
template <typename T>
std::vector<T> ablate(std::span<const T> x, std::span<const T> d, T lambda);
void ablate_in_place(std::span<float> x, std::span<const float> d, float lambda);

enum class PositionPolicy { all_generated, trigger_on_preact };
std::string_view to_string(PositionPolicy p);
PositionPolicy parse_position_policy(std::string_view s);

struct AblationSpec {
  std::size_t layer_index = 0;
  std::size_t feature = 0;
  double lambda = 0.0;
  PositionPolicy policy = PositionPolicy::all_generated;
  // trigger_on_preact only: ablate where the feature's pre-activation exceeds this.
  double trigger_threshold = std::numeric_limits<double>::infinity();

  void validate(const sae::SaeParams<float>& sae) const;
};

// Edits the residual at every position from `first_position` on. Generation passes the
// last prompt position, whose residual produces the first response token.
lm::Intervention make_intervention(const sae::SaeParams<float>& sae, const AblationSpec& spec,
                                   std::size_t first_position);

// Prompts must share a length so that generated positions line up.
std::vector<std::vector<TokenId>> generate_with_ablation(const lm::LmParams<float>& lm,
                                                         const sae::SaeParams<float>& sae, const AblationSpec& spec,
                                                         std::span<const eval::Prompt> prompts,
                                                         const lm::DecodeConfig& decode, std::uint64_t seed);

struct SweepFeature {
  std::string role;  // e.g. "target", "control"
  std::size_t feature = 0;
};

struct SweepRow {
  std::string feature_role;
  double lambda = 0.0;
  std::size_t n_prompts = 0;
  std::size_t n_switched = 0;
  double cs_ratio = 0.0;
};

// One row per (feature, lambda); every cell reuses the same prompts and seed.
std::vector<SweepRow> ablation_sweep(const lm::LmParams<float>& lm, const sae::SaeParams<float>& sae,
                                     std::span<const SweepFeature> features, std::span<const double> lambdas,
                                     std::span<const eval::Prompt> prompts, const Vocabulary& vocab,
                                     const ScriptRegistry& registry, const LanguageId& lang,
                                     const lm::DecodeConfig& decode, std::uint64_t seed,
                                     PositionPolicy policy = PositionPolicy::all_generated,
                                     double trigger_threshold = std::numeric_limits<double>::infinity());

std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace cslab::steer
