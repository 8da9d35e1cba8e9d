#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cslab/langfeat.hpp"
#include "cslab/microlm.hpp"
#include "cslab/sae.hpp"

namespace cslab::sasft {

using ad::Var;

enum class Mode { sft_only, reduce, reduce_zero, enhance };
std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct SasftConfig {
  Mode mode = Mode::sft_only;
  // The language whose features are pushed down (reduce) or up (enhance).
  LanguageId target_language;
  std::vector<std::size_t> layers{0, 1};  // reverse-counted
  std::size_t features_per_layer = 2;
  double aux_weight = 0.05;
  double lr = 1e-3;
  double weight_decay = 0.1;
  std::size_t warmup = 100;
  std::size_t batch = 64;
  std::size_t steps = 300;
  // Input positions before this carry no loss (the prompt part of each sample).
  std::size_t response_start = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// One language label per sample and a loss mask per (sample, input position).
struct BatchAnnotation {
  std::vector<LanguageId> sample_langs;
  std::size_t seq = 0;
  std::vector<std::uint8_t> included;  // batch × seq

  std::size_t rows() const { return sample_langs.size() * seq; }
};

// Frozen SAE encoder rows for the selected features of one layer, with their thresholds.
template <typename T>
struct AuxLayer {
  std::size_t layer_index = 0;
  std::vector<std::size_t> features;
  sae::FeatureSlice<T> slice;  // rows parallel to features
  langfeat::Thresholds thresholds;
};

template <typename T>
AuxLayer<T> make_aux_layer(const sae::SaeParams<T>& sae, const langfeat::LanguageFeatureSet& set);

// Pre-activations of the layer's selected features: rows × k, constant in the SAE.
template <typename T>
Var<T> feature_preacts(const Var<T>& residual, const AuxLayer<T>& layer);

// Mean over included positions of samples not in `lang` of Σ_s ReLU(f_s − α[s][j]),
// summed over layers. `f` holds one rows × k pre-activation node per layer.
template <typename T>
Var<T> loss_reduce(std::span<const Var<T>> f, std::span<const AuxLayer<T>> layers, const LanguageId& lang,
                   const BatchAnnotation& ann);

// Mean over included positions of samples in `lang` of Σ_s ReLU(β[s] − f_s), summed over layers.
template <typename T>
Var<T> loss_enhance(std::span<const Var<T>> f, std::span<const AuxLayer<T>> layers, const LanguageId& lang,
                    const BatchAnnotation& ann);

template <typename T>
Var<T> total_loss(const Var<T>& ce, const Var<T>& aux, T aux_weight);

template <typename T>
struct StepLosses {
  Var<T> ce, aux, total;
};

// Builds the full training objective for one batch. `layers` may be empty for sft_only.
template <typename T>
StepLosses<T> step_losses(const lm::LmVars<T>& vars, const lm::TrainBatch& batch, const BatchAnnotation& ann,
                          std::span<const AuxLayer<T>> layers, const SasftConfig& cfg);

struct TrainSample {
  LanguageId lang;
  std::vector<TokenId> tokens;  // BOS + document
};

std::vector<TrainSample> training_samples(const Corpus& corpus, const Vocabulary& vocab);

struct LogRow {
  std::size_t step = 0;
  double ce = 0.0, aux = 0.0, total = 0.0, lr = 0.0;
};

struct TrainResult {
  lm::LmParams<float> params;
  std::vector<LogRow> log;
};

// AdamW with linear warmup and cosine decay. reduce_zero trains against α = 0.
TrainResult train(const lm::LmParams<float>& init, std::span<const TrainSample> samples,
                  std::span<const AuxLayer<float>> layers, const SasftConfig& cfg);

std::string log_csv(std::span<const LogRow> log);

}  // namespace cslab::sasft
