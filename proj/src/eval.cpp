#include "cslab/eval.hpp"

#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

namespace cslab::eval {

std::vector<Prompt> prompts_from_corpus(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<Prompt> out;
  for (const auto& doc : corpus.documents) {
    if (doc.role != DocRole::prompt) continue;
    Prompt p{doc.lang, {Vocabulary::kBos}};
    const auto body = vocab.encode_utf8(doc.text);
    p.tokens.insert(p.tokens.end(), body.begin(), body.end());
    out.push_back(std::move(p));
  }
  return out;
}

CsReport cs_report(const LanguageId& lang, std::vector<bool> flags) {
  if (flags.empty()) throw ValidationError("cs ratio: empty prompt set");
  CsReport r{lang, flags.size(), 0, 0.0, std::move(flags)};
  for (bool f : r.flags) r.n_switched += f ? 1 : 0;
  r.ratio = static_cast<double>(r.n_switched) / static_cast<double>(r.n_prompts);
  return r;
}

CsReport cs_report(const LanguageId& lang, std::span<const std::string> responses, const ScriptRegistry& registry) {
  std::vector<bool> flags;
  flags.reserve(responses.size());
  for (const auto& text : responses) flags.push_back(registry.contains_language(lang, text));
  return cs_report(lang, std::move(flags));
}

bool switched(const Vocabulary& vocab, const ScriptRegistry& registry, const LanguageId& lang,
              std::span<const TokenId> response) {
  return registry.contains_language(lang, vocab.decode(response));
}

CsRun cs_ratio(const lm::LmParams<float>& lm, std::span<const Prompt> prompts, const Vocabulary& vocab,
               const ScriptRegistry& registry, const LanguageId& lang, const lm::DecodeConfig& decode,
               std::uint64_t seed, const lm::Intervention* intervention) {
  if (prompts.empty()) throw ValidationError("cs ratio: empty prompt set");
  std::vector<std::vector<TokenId>> inputs;
  inputs.reserve(prompts.size());
  for (const auto& p : prompts) {
    if (p.lang == lang) throw ValidationError("cs ratio: prompt expects language " + lang + " itself");
    inputs.push_back(p.tokens);
  }
  CsRun run;
  run.responses = lm::generate(lm, inputs, decode, seed, intervention);
  std::vector<bool> flags;
  for (const auto& r : run.responses) flags.push_back(switched(vocab, registry, lang, r));
  run.report = cs_report(lang, std::move(flags));
  return run;
}

std::string cs_report_csv(const CsReport& report, std::span<const Prompt> prompts) {
  if (prompts.size() != report.flags.size()) throw ValidationError("cs report: prompt count mismatch");
  std::string out = "prompt_id,lang_expected,switched\n";
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out += std::to_string(i) + "," + prompts[i].lang + "," + (report.flags[i] ? "true" : "false") + "\n";
  }
  return out;
}

std::optional<double> PositionProfile::at(int offset) const {
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] == offset && counts[i] > 0) return mean_preact[i];
  }
  return std::nullopt;
}

PositionProfile preact_profile(const lm::LmParams<float>& lm, const sae::SaeParams<float>& sae, std::size_t feature,
                               std::span<const Prompt> prompts, std::span<const std::vector<TokenId>> responses,
                               const Vocabulary& vocab, const ScriptRegistry& registry, const LanguageId& lang,
                               std::size_t window) {
  if (window == 0) throw ValidationError("preact profile: window must be >= 1");
  if (prompts.size() != responses.size()) throw ValidationError("preact profile: prompt/response count mismatch");
  if (feature >= sae.features()) throw ValidationError("preact profile: feature out of range");
  const int w = static_cast<int>(window);
  PositionProfile prof{window, {}, std::vector<double>(2 * window + 1, 0.0), std::vector<std::size_t>(2 * window + 1, 0)};
  for (int o = -w; o <= w; ++o) prof.offsets.push_back(o);

  std::size_t used = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto first = registry.first_in_language(lang, vocab.decode(responses[i]));
    if (!first) continue;
    ++used;
    std::vector<TokenId> seq = prompts[i].tokens;
    seq.insert(seq.end(), responses[i].begin(), responses[i].end());
    const auto fwd = lm::forward(lm, seq, {sae.layer_index});
    const auto& vecs = fwd.captures.at(sae.layer_index).vectors;
    const auto zero = static_cast<long>(prompts[i].tokens.size() + *first);
    for (int o = -w; o <= w; ++o) {
      const long pos = zero + o;
      if (pos < 0 || pos >= static_cast<long>(seq.size())) continue;
      const auto f = sae::preact<float>(sae, vecs.row(static_cast<std::size_t>(pos)));
      prof.mean_preact[static_cast<std::size_t>(o + w)] += f[feature];
      ++prof.counts[static_cast<std::size_t>(o + w)];
    }
  }
  if (used == 0) throw ValidationError("preact profile: no response switches to " + lang);
  for (std::size_t k = 0; k < prof.counts.size(); ++k) {
    if (prof.counts[k] > 0) prof.mean_preact[k] /= static_cast<double>(prof.counts[k]);
  }
  return prof;
}

std::string profile_csv(const PositionProfile& profile) {
  std::string out = "offset,mean_preact,count\n";
  for (std::size_t k = 0; k < profile.offsets.size(); ++k) {
    out += std::to_string(profile.offsets[k]) + "," +
           (profile.counts[k] > 0 ? format_double(profile.mean_preact[k]) : std::string()) + "," +
           std::to_string(profile.counts[k]) + "\n";
  }
  return out;
}

std::map<LanguageId, double> perplexity_per_language(const lm::LmParams<float>& lm, const Vocabulary& vocab,
                                                     std::span<const Document> docs) {
  std::map<LanguageId, std::pair<double, std::size_t>> acc;
  // Equal-length documents share a forward batch.
  std::map<std::pair<LanguageId, std::size_t>, std::vector<std::vector<TokenId>>> groups;
  for (const auto& doc : docs) {
    std::vector<TokenId> seq{Vocabulary::kBos};
    const auto body = vocab.encode_utf8(doc.text);
    seq.insert(seq.end(), body.begin(), body.end());
    if (seq.size() < 2) continue;
    groups[{doc.lang, seq.size()}].push_back(std::move(seq));
  }
  constexpr std::size_t kChunk = 64;
  for (const auto& [key, seqs] : groups) {
    const std::size_t len = key.second;
    auto& [total, count] = acc[key.first];
    for (std::size_t start = 0; start < seqs.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, seqs.size() - start);
      lm::TokenBatch batch{n, len, {}};
      for (std::size_t i = 0; i < n; ++i) batch.ids.insert(batch.ids.end(), seqs[start + i].begin(), seqs[start + i].end());
      const auto out = lm::forward_batch(lm, batch);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t t = 0; t + 1 < len; ++t) {
          const auto row = out.logits.row(b * len + t);
          double mx = -std::numeric_limits<double>::infinity();
          for (float v : row) mx = std::max(mx, static_cast<double>(v));
          double z = 0.0;
          for (float v : row) z += std::exp(static_cast<double>(v) - mx);
          total += mx + std::log(z) - static_cast<double>(row[static_cast<std::size_t>(seqs[start + b][t + 1])]);
          ++count;
        }
      }
    }
  }
  std::map<LanguageId, double> ppl;
  for (const auto& [lang, tc] : acc) ppl[lang] = std::exp(tc.first / static_cast<double>(tc.second));
  return ppl;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

ZTestResult ztest(std::size_t x1, std::size_t n1, std::size_t x2, std::size_t n2) {
  if (n1 == 0 || n2 == 0 || x1 > n1 || x2 > n2) {
    throw ValidationError("ztest: need 0 <= x <= n and n >= 1");
  }
  ZTestResult r{x1, n1, x2, n2};
  const double p1 = static_cast<double>(x1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(x2) / static_cast<double>(n2);
  const double pooled = static_cast<double>(x1 + x2) / static_cast<double>(n1 + n2);
  if (pooled == 0.0 || pooled == 1.0) {
    r.degenerate = true;
    r.z = std::numeric_limits<double>::quiet_NaN();
    r.p = p1 <= p2 ? 1.0 : 0.0;
    return r;
  }
  const double se =
      std::sqrt(pooled * (1.0 - pooled) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  r.z = (p1 - p2) / se;
  // 1 - Φ(z) = Φ(-z) avoids cancellation in the upper tail.
  r.p = normal_cdf(-r.z);
  return r;
}

std::string ztest_json(const ZTestResult& r) {
  nlohmann::json j = {{"x1", r.x1}, {"n1", r.n1}, {"x2", r.x2}, {"n2", r.n2}, {"p", r.p}, {"degenerate", r.degenerate}};
  j["z"] = r.degenerate ? nlohmann::json(nullptr) : nlohmann::json(r.z);
  return j.dump(2) + "\n";
}

}  // namespace cslab::eval
