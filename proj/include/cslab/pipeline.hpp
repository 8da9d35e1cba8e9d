#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "cslab/eval.hpp"
#include "cslab/langfeat.hpp"
#include "cslab/run_config.hpp"

namespace cslab::pipeline {

namespace fs = std::filesystem;

// Paths are relative to the run directory; digests are sha256 hex.
struct Manifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
};

Manifest begin(std::string command);
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(std::string_view json);

// Fixed offsets mixed into the master seed.
enum class Stage : std::uint64_t { corpus = 1, lm_init = 2, pretrain = 3, sae = 4, finetune = 5, eval = 6 };
std::uint64_t stage_seed(std::uint64_t master, Stage stage);

using Logger = std::function<void(const std::string&)>;

class Run {
 public:
  Run(RunConfig cfg, fs::path dir, Logger log = {});

  const RunConfig& config() const { return cfg_; }
  const fs::path& dir() const { return dir_; }
  fs::path path(std::string_view name) const { return dir_ / std::string(name); }
  void log(const std::string& msg) const;

  // Throws MissingInputError if absent, ValidationError if the file no longer matches the
  // digest recorded by the manifest that produced it. Returns the digest.
  std::string check_input(std::string_view name) const;
  std::vector<Manifest> manifests() const;
  void write_manifest(const std::string& name, Manifest m) const;

 private:
  RunConfig cfg_;
  fs::path dir_;
  Logger log_;
};

// "base" is the pretrained model; any mode name is its fine-tuned checkpoint.
std::string model_checkpoint(std::string_view model);
std::string features_file(const LanguageId& lang, std::size_t layer);
std::string sae_file(std::size_t layer);

struct LoadedCorpus {
  Corpus corpus;
  Vocabulary vocab;
};
LoadedCorpus load_corpus(const Run& run, Manifest& m);

Manifest gen_corpus(const Run& run);
Manifest train_lm(const Run& run);
Manifest train_sae(const Run& run);
Manifest find_features(const Run& run);
Manifest run_sasft(const Run& run, sasft::Mode mode);
Manifest eval_cs(const Run& run, const std::string& model);
Manifest eval_ppl(const Run& run, const std::string& model);
Manifest ablate_sweep(const Run& run, const std::string& model);
Manifest profile_preact(const Run& run, const std::string& model);
// One-tailed test that `first` switches more often than `second`, from their eval-cs outputs.
Manifest ztest_models(const Run& run, const std::string& first, const std::string& second);

// Every stage in order, then the report.
void run_all(const Run& run);

}  // namespace cslab::pipeline
