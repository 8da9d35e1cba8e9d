#include <doctest.h>

#include <cmath>

#include "cslab/corpus.hpp"

using namespace cslab;

namespace {

std::map<LanguageId, SyntheticLanguage> two_languages() {
  return {{"synA", make_language("synA", 0xE000, 30, 7)}, {"synB", make_language("synB", 0xE100, 30, 8)}};
}

MixtureConfig mixture(double rate, std::size_t docs) {
  MixtureConfig cfg;
  cfg.languages = {"synA", "synB"};
  cfg.docs_per_language = docs;
  cfg.doc_length = 48;
  cfg.injection_rate = rate;
  cfg.injection_lang = "synB";
  cfg.injection_span = 8;
  return cfg;
}

}  // namespace

TEST_CASE("make_language builds a contiguous block with normalized rows") {
  const SyntheticLanguage lang = make_language("synA", 0xE000, 30, 7);
  REQUIRE(lang.alphabet.size() == 30);
  CHECK(lang.alphabet.front() == 0xE000);
  CHECK(lang.alphabet.back() == 0xE01D);
  for (const auto& row : lang.transition) {
    double total = 0;
    for (double p : row) total += p;
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
  CHECK(make_language("synA", 0xE000, 30, 7).transition == lang.transition);
  CHECK_THROWS_AS(make_language("synA", 0xE000, 1, 7), ValidationError);
  CHECK_THROWS_AS(make_language("synA", 0x4E00, 30, 7), ValidationError);
}

TEST_CASE("sample_document honours the length contract and determinism") {
  const SyntheticLanguage lang = make_language("synA", 0xE000, 30, 7);
  Rng r1(5), r2(5);
  const Document d1 = sample_document(lang, 5, r1);
  const Document d2 = sample_document(lang, 5, r2);
  CHECK(d1.text == d2.text);
  const auto cps = utf8::decode(d1.text);
  CHECK(cps.size() == 5);
  const ScriptRegistry reg = builtin_registry();
  for (char32_t cp : cps) CHECK((cp == kSpace || cp == kPeriod || reg.script_of(cp) == ScriptId("synA")));
  CHECK_THROWS(sample_document(lang, 0, r1));
}

// 10^6 draws: at 10^5 the largest of ~1000 entries sits near 3 sigma of 0.02.
TEST_CASE("empirical bigrams match the transition matrix") {
  const SyntheticLanguage lang = make_language("synA", 0xE000, 30, 7);
  Rng rng(11);
  std::size_t state = lang.space_state();
  const std::size_t n = lang.num_states();
  std::vector<std::vector<double>> counts(n, std::vector<double>(n, 0.0));
  std::vector<double> from(n, 0.0);
  for (int i = 0; i < 1000000; ++i) {
    const std::size_t prev = state;
    lang.walk(1, state, rng);
    counts[prev][state] += 1;
    from[prev] += 1;
  }
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (from[i] < 200) continue;  // rare states give noisy rows
    for (std::size_t j = 0; j < n; ++j) {
      const double diff = std::abs(counts[i][j] / from[i] - lang.transition[i][j]);
      worst = std::max(worst, diff);
    }
  }
  CHECK(worst <= 0.02);
}

TEST_CASE("zero injection keeps every document script-pure") {
  const auto langs = two_languages();
  Rng rng(1);
  const Corpus corpus = build_corpus(mixture(0.0, 200), langs, rng);
  const ScriptRegistry reg = builtin_registry();
  CHECK(corpus.manifest.counts.at("synA") == 200);
  CHECK(corpus.manifest.counts.at("synB") == 200);
  CHECK(corpus.manifest.injected.empty());
  for (const auto& d : corpus.documents) {
    for (const char* other : {"synA", "synB"}) {
      if (d.lang != other) CHECK_FALSE(reg.contains_language(other, std::string_view(d.text)));
    }
  }
}

TEST_CASE("full injection rate injects every host document exactly once") {
  const auto langs = two_languages();
  Rng rng(2);
  const MixtureConfig cfg = mixture(1.0, 100);
  const Corpus corpus = build_corpus(cfg, langs, rng);
  CHECK(corpus.manifest.injected.size() == 100);
  const ScriptRegistry reg = builtin_registry();
  for (std::size_t k = 0; k < corpus.manifest.injected.size(); ++k) {
    const Document& d = corpus.documents[corpus.manifest.injected[k]];
    CHECK(d.lang == "synA");
    const auto cps = utf8::decode(d.text);
    CHECK(cps.size() == cfg.doc_length);
    const std::size_t pos = corpus.manifest.injection_positions[k];
    CHECK(pos >= 1);
    CHECK(pos + cfg.injection_span <= cfg.doc_length - 1);
    for (std::size_t i = 0; i < cps.size(); ++i) {
      const bool in_span = i >= pos && i < pos + cfg.injection_span;
      if (!in_span) CHECK_FALSE(reg.script_of(cps[i]) == ScriptId("synB"));
    }
  }
}

TEST_CASE("sentence-break injection opens the span with a period and space") {
  const auto langs = two_languages();
  Rng rng(3);
  MixtureConfig cfg = mixture(1.0, 50);
  cfg.injection_site = InjectionSite::sentence_break;
  const Corpus corpus = build_corpus(cfg, langs, rng);
  for (std::size_t k = 0; k < corpus.manifest.injected.size(); ++k) {
    const auto cps = utf8::decode(corpus.documents[corpus.manifest.injected[k]].text);
    const std::size_t pos = corpus.manifest.injection_positions[k];
    CHECK(cps[pos - 1] == kSpace);
    CHECK(cps[pos] == kPeriod);
    CHECK(cps[pos + 1] == kSpace);
  }
}

TEST_CASE("injected count stays within three sigma of the binomial mean") {
  const auto langs = two_languages();
  Rng rng(2024);
  const Corpus corpus = build_corpus(mixture(0.05, 2000), langs, rng);
  const double mean = 2000 * 0.05;
  const double sigma = std::sqrt(2000 * 0.05 * 0.95);
  const auto n = static_cast<double>(corpus.manifest.injected.size());
  CHECK(std::abs(n - mean) <= 3 * sigma);
}

TEST_CASE("corpus bytes are reproducible and round-trip through JSONL") {
  const auto langs = two_languages();
  Rng r1(9), r2(9);
  const Corpus a = build_corpus(mixture(0.05, 100), langs, r1);
  const Corpus b = build_corpus(mixture(0.05, 100), langs, r2);
  CHECK(corpus_to_jsonl(a.documents) == corpus_to_jsonl(b.documents));
  CHECK(manifest_to_json(a.manifest) == manifest_to_json(b.manifest));
  const auto back = corpus_from_jsonl(corpus_to_jsonl(a.documents));
  REQUIRE(back.size() == a.documents.size());
  CHECK(back[17].text == a.documents[17].text);
  CHECK(manifest_from_json(manifest_to_json(a.manifest)).injected == a.manifest.injected);
}

TEST_CASE("vocabulary is contiguous and round-trips") {
  const auto langs = two_languages();
  std::vector<SyntheticLanguage> list{langs.at("synA"), langs.at("synB")};
  const Vocabulary vocab = Vocabulary::from_languages(list);
  CHECK(vocab.size() == 63);
  CHECK(vocab.token_of(kBosCodepoint) == Vocabulary::kBos);
  CHECK(vocab.token_of(0xE100) == 33);
  const Vocabulary back = Vocabulary::from_csv(vocab.to_csv());
  CHECK(back.size() == vocab.size());
  CHECK(back.codepoint_of(40) == vocab.codepoint_of(40));
  CHECK(vocab.to_csv().substr(0, 30) == "codepoint_hex,token_id\n2,0\n20,");
  CHECK_THROWS_AS(Vocabulary::from_csv("codepoint_hex,token_id\n2,1\n"), ValidationError);
}

TEST_CASE("mixture validation") {
  MixtureConfig cfg = mixture(1.5, 10);
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = mixture(0.1, 10);
  cfg.injection_lang = "synZ";
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
