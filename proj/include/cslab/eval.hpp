#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cslab/corpus.hpp"
#include "cslab/microlm.hpp"
#include "cslab/sae.hpp"
#include "cslab/scripts.hpp"

namespace cslab::eval {

struct Prompt {
  LanguageId lang;  // expected response language
  std::vector<TokenId> tokens;  // starts with BOS
};

// BOS followed by each prompt-role document of the given languages, in corpus order.
std::vector<Prompt> prompts_from_corpus(const Corpus& corpus, const Vocabulary& vocab);

struct CsReport {
  LanguageId lang;
  std::size_t n_prompts = 0;
  std::size_t n_switched = 0;
  double ratio = 0.0;
  std::vector<bool> flags;
};

CsReport cs_report(const LanguageId& lang, std::vector<bool> flags);
// Flags each text by whether it contains a codepoint of `lang`'s script.
CsReport cs_report(const LanguageId& lang, std::span<const std::string> responses, const ScriptRegistry& registry);
bool switched(const Vocabulary& vocab, const ScriptRegistry& registry, const LanguageId& lang,
              std::span<const TokenId> response);

struct CsRun {
  CsReport report;
  std::vector<std::vector<TokenId>> responses;
};

// One sampled response per prompt, flagged for `lang`. Prompt languages must differ from it.
CsRun cs_ratio(const lm::LmParams<float>& lm, std::span<const Prompt> prompts, const Vocabulary& vocab,
               const ScriptRegistry& registry, const LanguageId& lang, const lm::DecodeConfig& decode,
               std::uint64_t seed, const lm::Intervention* intervention = nullptr);

std::string cs_report_csv(const CsReport& report, std::span<const Prompt> prompts);

struct PositionProfile {
  std::size_t window = 0;
  std::vector<int> offsets;  // -W..W
  std::vector<double> mean_preact;
  std::vector<std::size_t> counts;

  // Mean at an offset; empty where no response reached it.
  std::optional<double> at(int offset) const;
};

// Pre-activation of `feature` around the first token of `lang`'s script in each switching
// response; offset 0 is that token.
PositionProfile preact_profile(const lm::LmParams<float>& lm, const sae::SaeParams<float>& sae, std::size_t feature,
                               std::span<const Prompt> prompts, std::span<const std::vector<TokenId>> responses,
                               const Vocabulary& vocab, const ScriptRegistry& registry, const LanguageId& lang,
                               std::size_t window);

std::string profile_csv(const PositionProfile& profile);

// exp(mean next-token cross-entropy) over every token of the language's documents.
std::map<LanguageId, double> perplexity_per_language(const lm::LmParams<float>& lm, const Vocabulary& vocab,
                                                     std::span<const Document> docs);

struct ZTestResult {
  std::size_t x1 = 0, n1 = 0, x2 = 0, n2 = 0;
  double z = 0.0;  // NaN when degenerate
  double p = 0.0;  // one-tailed, alternative: proportion 1 > proportion 2
  bool degenerate = false;
};

// Standard normal CDF.
double normal_cdf(double x);
ZTestResult ztest(std::size_t x1, std::size_t n1, std::size_t x2, std::size_t n2);
std::string ztest_json(const ZTestResult& r);

}  // namespace cslab::eval
