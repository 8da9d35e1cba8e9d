#include <doctest.h>

#include <cmath>

#include "cslab/langfeat.hpp"
#include "oracles.hpp"

using namespace cslab;
using namespace cslab::langfeat;
using namespace cslab::testing;

namespace {

struct Toy {
  std::vector<SyntheticLanguage> langs;
  Vocabulary vocab;
  Corpus corpus;
  lm::LmParams<float> lm;
};

Toy make_toy(double injection_rate) {
  Toy toy;
  toy.langs = {make_language("synA", 0xE000, 6, 1), make_language("synB", 0xE100, 6, 2)};
  toy.vocab = Vocabulary::from_languages(toy.langs);
  MixtureConfig cfg;
  cfg.languages = {"synA", "synB"};
  cfg.docs_per_language = 20;
  cfg.doc_length = 12;
  cfg.injection_rate = injection_rate;
  cfg.injection_lang = "synB";
  cfg.injection_span = 3;
  std::map<LanguageId, SyntheticLanguage> by_id;
  for (const auto& l : toy.langs) by_id.emplace(l.lang_id, l);
  Rng rng(5);
  toy.corpus = build_corpus(cfg, by_id, rng);
  lm::LmConfig lc;
  lc.vocab = toy.vocab.size();
  lc.d_model = 8;
  lc.n_layers = 2;
  lc.n_heads = 2;
  lc.d_ff = 16;
  lc.ctx_len = 16;
  Rng lrng(6);
  toy.lm = lm::init_lm(lc, lrng);
  return toy;
}

}  // namespace

TEST_CASE("two-language hand instance and antisymmetry") {
  const std::map<LanguageId, std::vector<double>> means{{"A", {2.0, 1.0}}, {"B", {0.5, 1.0}}};
  const auto a = monolinguality(means, "A");
  const auto b = monolinguality(means, "B");
  CHECK(a[0].nu == doctest::Approx(1.5));
  CHECK(b[0].nu == doctest::Approx(-1.5));
  CHECK(a[1].nu == 0.0);
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(a[s].nu == -b[s].nu);
    CHECK(a[s].nu == a[s].mu - a[s].gamma);
  }
  CHECK_THROWS_AS(monolinguality(std::map<LanguageId, std::vector<double>>{{"A", {1.0}}}, "A"), ValidationError);
  CHECK_THROWS_AS(monolinguality(means, "C"), ValidationError);
}

TEST_CASE("gamma weights languages equally, not by token count") {
  Rng rng(1);
  const auto sae = random_sae_f(3, 4, 0, rng);
  ResidualDataset data{0, {{"A", random_rows(2, 3, rng)}, {"B", random_rows(9, 3, rng)}, {"C", random_rows(1, 3, rng)}}};
  const auto means = mean_activations(sae, data);
  const auto scores = monolinguality(sae, data, "A");
  for (std::size_t s = 0; s < 4; ++s) CHECK(scores[s].gamma == doctest::Approx((means.at("B")[s] + means.at("C")[s]) / 2));
}

TEST_CASE("identical distributions give nu = 0 and shifts leave nu unchanged") {
  Rng rng(2);
  const auto sae = random_sae_f(4, 8, 0, rng);
  const auto rows = random_rows(10, 4, rng);
  const ResidualDataset same{0, {{"A", rows}, {"B", rows}, {"C", rows}}};
  for (const auto& sc : monolinguality(sae, same, "B")) CHECK(std::abs(sc.nu) < 1e-12);

  std::map<LanguageId, std::vector<double>> means{{"A", {0.3, 2.0}}, {"B", {1.1, 0.0}}, {"C", {0.7, 0.4}}};
  auto shifted = means;
  for (auto& [l, v] : shifted)
    for (auto& x : v) x += 5.25;
  const auto before = monolinguality(means, "C");
  const auto after = monolinguality(shifted, "C");
  for (std::size_t s = 0; s < 2; ++s) CHECK(after[s].nu == doctest::Approx(before[s].nu).epsilon(1e-12));
}

TEST_CASE("monolinguality matches a naive-loop oracle on random instances") {
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto sae = random_sae_f(4, 8, 0, rng);
    ResidualDataset data{0, {}};
    for (const char* l : {"A", "B", "C"}) data.by_language.emplace(l, random_rows(5, 4, rng));
    for (const char* l : {"A", "B", "C"}) {
      const auto scores = monolinguality(sae, data, l);
      for (std::size_t s = 0; s < 8; ++s) worst = std::max(worst, std::abs(scores[s].nu - naive_nu(sae, data, l, s)));
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("select_features orders by nu with index tie-break") {
  auto scores_of = [](std::vector<double> nu) {
    std::vector<FeatureScore> s(nu.size());
    for (std::size_t i = 0; i < nu.size(); ++i) s[i] = {i, nu[i], 0.0, nu[i]};
    return s;
  };
  const auto s = scores_of({0.1, 0.9, 0.9, 0.2});
  CHECK(select_features(s, 2) == std::vector<std::size_t>{1, 2});
  CHECK(select_features(s, 1) == std::vector<std::size_t>{1});
  CHECK(select_features(s, 4) == std::vector<std::size_t>{1, 2, 3, 0});
  CHECK_THROWS_AS(select_features(s, 5), ValidationError);
  CHECK_THROWS_AS(select_features(s, 0), ValidationError);

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> nu(12);
    for (auto& v : nu) v = std::round(uniform01(rng) * 6.0) - 3.0;
    auto scaled = nu;
    for (auto& v : scaled) v *= 0.37;
    CHECK(select_features(scores_of(nu), 5) == select_features(scores_of(scaled), 5));
  }
}

TEST_CASE("thresholds are mean pre-activations and may be negative") {
  Rng rng(5);
  auto sae = random_sae_f(3, 4, 0, rng);
  for (std::size_t i = 0; i < 3; ++i) sae.w_enc.at(1, i) = 0.0f;
  sae.b_enc[1] = -0.3f;
  const ResidualDataset data{0, {{"A", random_rows(4, 3, rng)}, {"B", random_rows(1, 3, rng)}, {"C", random_rows(4, 3, rng)}}};
  const std::vector<std::size_t> feats{1, 3};
  const auto th = estimate_thresholds(sae, data, feats, "A");
  CHECK(th.alpha.at(1).at("B") == doctest::Approx(-0.3));
  CHECK(th.alpha.at(1).at("C") == doctest::Approx(-0.3));
  CHECK_FALSE(th.alpha.at(1).contains("A"));
  CHECK(th.alpha.at(3).at("B") == doctest::Approx(naive_preact(sae, data.by_language.at("B"), 0, 3)).epsilon(1e-12));
  double total = 0.0;
  for (std::size_t r = 0; r < 4; ++r) total += naive_preact(sae, data.by_language.at("C"), r, 3);
  CHECK(std::abs(th.alpha.at(3).at("C") - total / 4) <= 1e-12);
  total = 0.0;
  for (std::size_t r = 0; r < 4; ++r) total += naive_preact(sae, data.by_language.at("A"), r, 3);
  CHECK(std::abs(th.beta.at(3) - total / 4) <= 1e-12);

  CHECK_THROWS_AS(estimate_thresholds(sae, data, std::vector<std::size_t>{}, "A"), ValidationError);
  ResidualDataset empty = data;
  empty.by_language["B"] = Tensor<float>({0, 3});
  CHECK_THROWS_AS(estimate_thresholds(sae, empty, feats, "A"), ValidationError);
}

TEST_CASE("collect_residuals respects the budget, skips injected documents and is deterministic") {
  const Toy toy = make_toy(0.5);
  const std::vector<LanguageId> langs{"synA", "synB"};
  const auto data = collect_residuals(toy.lm, toy.vocab, toy.corpus, 1, langs, 100);
  CHECK(data.by_language.size() == 2);
  CHECK(data.width() == 8);
  for (const auto& [l, rows] : data.by_language) CHECK(rows.rows() <= 100);
  CHECK(data.by_language.at("synB").rows() == 100);

  // Unlimited budget: exactly the clean documents' tokens are kept.
  const auto all = collect_residuals(toy.lm, toy.vocab, toy.corpus, 0, langs, 1u << 20);
  std::size_t clean_a = 0;
  for (std::size_t i = 0; i < toy.corpus.documents.size(); ++i) {
    if (toy.corpus.documents[i].lang == "synA" && !toy.corpus.is_injected(i)) ++clean_a;
  }
  CHECK(toy.corpus.manifest.injected.size() > 0);
  CHECK(all.by_language.at("synA").rows() == clean_a * 12);

  // The first clean synA document's residuals come first, position 1 onwards.
  std::size_t first = 0;
  while (toy.corpus.documents[first].lang != "synA" || toy.corpus.is_injected(first)) ++first;
  std::vector<TokenId> seq{Vocabulary::kBos};
  for (TokenId t : toy.vocab.encode_utf8(toy.corpus.documents[first].text)) seq.push_back(t);
  const auto single = lm::forward(toy.lm, seq, {0});
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(all.by_language.at("synA").at(0, c) == doctest::Approx(single.captures.at(0).vectors.at(1, c)).epsilon(1e-5));
  }

  const auto again = collect_residuals(toy.lm, toy.vocab, toy.corpus, 1, langs, 100);
  CHECK(again.by_language == data.by_language);
  const std::vector<LanguageId> missing{"synC"};
  CHECK_THROWS_AS(collect_residuals(toy.lm, toy.vocab, toy.corpus, 0, missing, 10), ValidationError);
}

TEST_CASE("feature set JSON round trip") {
  LanguageFeatureSet set{"synB", 1, {5, 2}, {0.75, 0.5}, {}};
  set.thresholds.alpha[5]["synA"] = -0.25;
  set.thresholds.alpha[2]["synA"] = 0.125;
  set.thresholds.beta[5] = 1.5;
  set.thresholds.beta[2] = 2.0;
  const auto back = feature_set_from_json(feature_set_to_json(set));
  CHECK(back.language == "synB");
  CHECK(back.layer_index == 1);
  CHECK(back.features == set.features);
  CHECK(back.nu == set.nu);
  CHECK(back.thresholds.alpha == set.thresholds.alpha);
  CHECK(back.thresholds.beta == set.thresholds.beta);
  CHECK_THROWS_AS(feature_set_from_json("{\"language\": 3}"), ValidationError);
}
