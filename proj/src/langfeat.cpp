#include "cslab/langfeat.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <numeric>

namespace cslab::langfeat {

using nlohmann::json;

std::size_t ResidualDataset::width() const { return by_language.empty() ? 0 : by_language.begin()->second.cols(); }

void ResidualDataset::validate() const {
  if (by_language.empty()) throw ValidationError("residual dataset: no languages");
  const std::size_t n = width();
  for (const auto& [lang, rows] : by_language) {
    if (rows.rank() != 2 || rows.rows() == 0) throw ValidationError("residual dataset: language " + lang + " is empty");
    if (rows.cols() != n) throw ValidationError("residual dataset: language " + lang + " has a different width");
  }
}

ResidualDataset collect_residuals(const lm::LmParams<float>& lm, const Vocabulary& vocab, const Corpus& corpus,
                                  std::size_t layer_index, std::span<const LanguageId> languages,
                                  std::size_t per_lang_token_budget) {
  if (layer_index >= lm.cfg.n_layers) throw ValidationError("collect_residuals: layer index out of range");
  constexpr std::size_t kChunk = 64;
  const std::size_t d = lm.cfg.d_model;
  ResidualDataset out{layer_index, {}};
  for (const auto& lang : languages) {
    std::vector<std::vector<TokenId>> seqs;
    for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
      const auto& doc = corpus.documents[i];
      if (doc.lang != lang || doc.role != DocRole::train || corpus.is_injected(i)) continue;
      std::vector<TokenId> seq{Vocabulary::kBos};
      const auto body = vocab.encode_utf8(doc.text);
      seq.insert(seq.end(), body.begin(), body.end());
      seqs.push_back(std::move(seq));
    }
    if (seqs.empty()) throw ValidationError("collect_residuals: no clean training documents for language " + lang);

    std::vector<float> rows;
    std::size_t taken = 0;
    for (std::size_t start = 0; start < seqs.size() && taken < per_lang_token_budget;) {
      // Chunks hold consecutive documents of equal length.
      const std::size_t len = seqs[start].size();
      std::size_t end = start;
      while (end < seqs.size() && end - start < kChunk && seqs[end].size() == len) ++end;
      lm::TokenBatch batch{end - start, len, {}};
      for (std::size_t i = start; i < end; ++i) batch.ids.insert(batch.ids.end(), seqs[i].begin(), seqs[i].end());
      const auto res = lm::forward_batch(lm, batch, {layer_index});
      const auto& cap = res.captures.at(layer_index);
      for (std::size_t b = 0; b < batch.batch && taken < per_lang_token_budget; ++b) {
        for (std::size_t t = 1; t < len && taken < per_lang_token_budget; ++t, ++taken) {
          const auto r = cap.row(b * len + t);
          rows.insert(rows.end(), r.begin(), r.end());
        }
      }
      start = end;
    }
    out.by_language.emplace(lang, Tensor<float>({taken, d}, std::move(rows)));
  }
  out.validate();
  return out;
}

std::map<LanguageId, std::vector<double>> mean_activations(const sae::SaeParams<float>& sae,
                                                           const ResidualDataset& data) {
  data.validate();
  const auto sd = sae.cast<double>();
  std::map<LanguageId, std::vector<double>> means;
  for (const auto& [lang, rows] : data.by_language) {
    const auto f = sae::preact_rows(sd, rows.cast<double>());
    std::vector<double> m(sae.features(), 0.0);
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t s = 0; s < m.size(); ++s) m[s] += std::max(f.at(r, s), 0.0);
    for (auto& v : m) v /= static_cast<double>(f.rows());
    means.emplace(lang, std::move(m));
  }
  return means;
}

std::vector<FeatureScore> monolinguality(const std::map<LanguageId, std::vector<double>>& means,
                                         const LanguageId& lang) {
  if (means.size() < 2) throw ValidationError("monolinguality: need at least two languages");
  const auto own = means.find(lang);
  if (own == means.end()) throw ValidationError("monolinguality: no residuals for language " + lang);
  const std::size_t m = own->second.size();
  std::vector<FeatureScore> scores(m);
  for (std::size_t s = 0; s < m; ++s) {
    double other = 0.0;
    for (const auto& [l, v] : means) {
      if (l != lang) other += v.at(s);
    }
    scores[s].feature = s;
    scores[s].mu = own->second[s];
    scores[s].gamma = other / static_cast<double>(means.size() - 1);
    scores[s].nu = scores[s].mu - scores[s].gamma;
  }
  return scores;
}

std::vector<FeatureScore> monolinguality(const sae::SaeParams<float>& sae, const ResidualDataset& data,
                                         const LanguageId& lang) {
  return monolinguality(mean_activations(sae, data), lang);
}

std::vector<std::size_t> select_features(std::span<const FeatureScore> scores, std::size_t k) {
  if (k == 0) throw ValidationError("select_features: k must be >= 1");
  if (k > scores.size()) {
    throw ValidationError("select_features: k = " + std::to_string(k) + " exceeds feature count " +
                          std::to_string(scores.size()));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].nu != scores[b].nu) return scores[a].nu > scores[b].nu;
    return scores[a].feature < scores[b].feature;
  });
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = scores[order[i]].feature;
  return out;
}

Thresholds estimate_thresholds(const sae::SaeParams<float>& sae, const ResidualDataset& data,
                               std::span<const std::size_t> features, const LanguageId& lang) {
  if (features.empty()) throw ValidationError("estimate_thresholds: no features");
  if (!data.by_language.contains(lang)) throw ValidationError("estimate_thresholds: no residuals for " + lang);
  for (const auto& [l, rows] : data.by_language) {
    if (rows.rows() == 0) throw ValidationError("estimate_thresholds: empty residual set for " + l);
  }
  const auto slice = sae::feature_slice(sae.cast<double>(), features);
  const sae::SaeParams<double> sub{sae.layer_index, slice.w, slice.b, Tensor<double>({sae.width(), features.size()}),
                                   Tensor<double>({sae.width()})};
  Thresholds th;
  for (const auto& [l, rows] : data.by_language) {
    const auto f = sae::preact_rows(sub, rows.cast<double>());
    for (std::size_t i = 0; i < features.size(); ++i) {
      double total = 0.0;
      for (std::size_t r = 0; r < f.rows(); ++r) total += f.at(r, i);
      const double mean = total / static_cast<double>(f.rows());
      if (l == lang) {
        th.beta[features[i]] = mean;
      } else {
        th.alpha[features[i]][l] = mean;
      }
    }
  }
  return th;
}

LanguageFeatureSet find_features(const sae::SaeParams<float>& sae, const ResidualDataset& data,
                                 const LanguageId& lang, std::size_t k) {
  const auto scores = monolinguality(sae, data, lang);
  LanguageFeatureSet set{lang, data.layer_index, select_features(scores, k), {}, {}};
  for (std::size_t s : set.features) set.nu.push_back(scores[s].nu);
  set.thresholds = estimate_thresholds(sae, data, set.features, lang);
  return set;
}

std::string feature_set_to_json(const LanguageFeatureSet& set) {
  json alpha = json::object(), beta = json::object();
  for (const auto& [s, per_lang] : set.thresholds.alpha) {
    json inner = json::object();
    for (const auto& [l, v] : per_lang) inner[l] = v;
    alpha[std::to_string(s)] = inner;
  }
  for (const auto& [s, v] : set.thresholds.beta) beta[std::to_string(s)] = v;
  const json j = {{"language", set.language}, {"layer_index", set.layer_index}, {"features", set.features},
                  {"nu", set.nu},             {"alpha", alpha},                 {"beta", beta}};
  return j.dump(2) + "\n";
}

LanguageFeatureSet feature_set_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    LanguageFeatureSet set;
    set.language = j.at("language").get<std::string>();
    set.layer_index = j.at("layer_index").get<std::size_t>();
    set.features = j.at("features").get<std::vector<std::size_t>>();
    set.nu = j.at("nu").get<std::vector<double>>();
    for (const auto& [s, per_lang] : j.at("alpha").items()) {
      for (const auto& [l, v] : per_lang.items()) set.thresholds.alpha[std::stoul(s)][l] = v.get<double>();
    }
    for (const auto& [s, v] : j.at("beta").items()) set.thresholds.beta[std::stoul(s)] = v.get<double>();
    if (set.nu.size() != set.features.size()) throw ValidationError("feature set: nu and features differ in length");
    return set;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("feature set: ") + e.what());
  }
}

}  // namespace cslab::langfeat
