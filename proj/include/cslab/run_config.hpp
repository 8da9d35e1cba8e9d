#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cslab/corpus.hpp"
#include "cslab/microlm.hpp"
#include "cslab/sae.hpp"
#include "cslab/sasft.hpp"
#include "cslab/steer.hpp"

namespace cslab {

struct LanguageSpec {
  LanguageId id;
  char32_t block_base = 0;
  std::size_t alphabet_size = 30;
  // Mixed with the master seed, so each run seed gets its own set of chains.
  std::uint64_t seed = 0;
};

struct CorpusStage {
  std::vector<LanguageSpec> languages;
  ChainShape chain;
  MixtureConfig mixture;
  LanguageId prompt_lang;
  std::size_t n_prompts = 1000;
  std::size_t prompt_length = 8;
  std::size_t heldout_per_language = 300;
};

struct PretrainConfig {
  std::size_t steps = 1200;
  std::size_t batch = 32;
  std::size_t warmup = 100;
  double lr = 1e-3;
  double weight_decay = 0.1;
};

struct SaeStage {
  std::vector<std::size_t> layers{0, 1};
  std::size_t token_budget = 24000;  // residual rows per language
  sae::SaeTrainConfig train;
};

struct FeatureStage {
  LanguageId target_lang;
  LanguageId control_lang;
  std::size_t k = 2;
};

struct EvalStage {
  lm::DecodeConfig decode;
  std::size_t profile_window = 6;
  std::size_t profile_layer = 0;
  // Model examined by the positional profile and the ablation sweep.
  std::string analysis_model = "sft_only";
};

struct AblationStage {
  std::size_t layer = 0;
  // The grid is multiplied by lambda_unit before use.
  std::vector<double> lambdas{0, 1, 2, 4, 8};
  double lambda_unit = 1.0;
  steer::PositionPolicy policy = steer::PositionPolicy::all_generated;
  // Used by trigger_on_preact; 0 is the ReLU gate.
  double trigger_threshold = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  CorpusStage corpus;
  lm::LmConfig lm;
  PretrainConfig pretrain;
  SaeStage sae;
  FeatureStage features;
  sasft::SasftConfig sasft;
  // Modes trained by the full pipeline, one checkpoint each.
  std::vector<sasft::Mode> compare{sasft::Mode::sft_only, sasft::Mode::reduce, sasft::Mode::reduce_zero};
  EvalStage eval;
  AblationStage ablation;

  void validate() const;
};

// Unknown keys, wrong types and missing required keys are ValidationErrors.
RunConfig parse_run_config(std::string_view yaml);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical YAML with every field spelled out; parse_run_config inverts it.
std::string run_config_to_yaml(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

}  // namespace cslab
