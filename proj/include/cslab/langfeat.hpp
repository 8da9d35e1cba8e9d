#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cslab/corpus.hpp"
#include "cslab/microlm.hpp"
#include "cslab/sae.hpp"

namespace cslab::langfeat {

using ad::Tensor;

// Residual vectors per language (rows × N) captured after one block.
struct ResidualDataset {
  std::size_t layer_index = 0;
  std::map<LanguageId, Tensor<float>> by_language;

  std::size_t width() const;
  void validate() const;
};

// Runs every clean training document of each language through the LM and keeps the
// residuals of its document tokens (BOS excluded), in corpus order, up to the budget.
ResidualDataset collect_residuals(const lm::LmParams<float>& lm, const Vocabulary& vocab, const Corpus& corpus,
                                  std::size_t layer_index, std::span<const LanguageId> languages,
                                  std::size_t per_lang_token_budget);

struct FeatureScore {
  std::size_t feature = 0;
  double mu = 0.0;     // mean activation on the language
  double gamma = 0.0;  // mean over the other languages of their mean activation
  double nu = 0.0;     // mu - gamma
};

// Per-language mean activation of every feature, accumulated in double precision.
std::map<LanguageId, std::vector<double>> mean_activations(const sae::SaeParams<float>& sae,
                                                           const ResidualDataset& data);

std::vector<FeatureScore> monolinguality(const std::map<LanguageId, std::vector<double>>& means,
                                         const LanguageId& lang);
std::vector<FeatureScore> monolinguality(const sae::SaeParams<float>& sae, const ResidualDataset& data,
                                         const LanguageId& lang);

// Top k by nu, ties to the lower feature index.
std::vector<std::size_t> select_features(std::span<const FeatureScore> scores, std::size_t k);

struct Thresholds {
  std::map<std::size_t, std::map<LanguageId, double>> alpha;  // feature -> other language -> mean pre-activation
  std::map<std::size_t, double> beta;                         // feature -> mean pre-activation on the language
};

Thresholds estimate_thresholds(const sae::SaeParams<float>& sae, const ResidualDataset& data,
                               std::span<const std::size_t> features, const LanguageId& lang);

struct LanguageFeatureSet {
  LanguageId language;
  std::size_t layer_index = 0;
  std::vector<std::size_t> features;  // rank order
  std::vector<double> nu;             // parallel to features
  Thresholds thresholds;
};

LanguageFeatureSet find_features(const sae::SaeParams<float>& sae, const ResidualDataset& data,
                                 const LanguageId& lang, std::size_t k);

std::string feature_set_to_json(const LanguageFeatureSet& set);
LanguageFeatureSet feature_set_from_json(std::string_view json);

}  // namespace cslab::langfeat
