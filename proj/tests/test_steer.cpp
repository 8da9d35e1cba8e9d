#include <doctest.h>

#include <cmath>

#include "cslab/steer.hpp"

using namespace cslab;
using namespace cslab::steer;

namespace {

struct Toy {
  std::vector<SyntheticLanguage> langs;
  Vocabulary vocab;
  lm::LmParams<float> lm;
  sae::SaeParams<float> sae;
  std::vector<eval::Prompt> prompts;
};

Toy make_toy() {
  Toy toy;
  toy.langs = {make_language("synA", 0xE000, 6, 1), make_language("synB", 0xE100, 6, 2)};
  toy.vocab = Vocabulary::from_languages(toy.langs);
  lm::LmConfig cfg;
  cfg.vocab = toy.vocab.size();
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.ctx_len = 32;
  Rng rng(3);
  toy.lm = lm::init_lm(cfg, rng);
  std::normal_distribution<float> dist(0.0f, 0.5f);
  toy.lm.for_each([&](const std::string& name, ad::Tensor<float>& t) {
    if (name.find("gain") == std::string::npos)
      for (auto& v : t.values()) v = dist(rng);
  });
  const std::vector<float> mean(8, 0.0f);
  toy.sae = sae::init_sae(8, 32, 0, mean, rng);
  for (int i = 0; i < 24; ++i) {
    const auto doc = sample_document(toy.langs[0], 5, rng, DocRole::prompt);
    eval::Prompt p{"synA", {Vocabulary::kBos}};
    for (TokenId t : toy.vocab.encode_utf8(doc.text)) p.tokens.push_back(t);
    toy.prompts.push_back(std::move(p));
  }
  return toy;
}

std::vector<std::vector<TokenId>> plain(const Toy& toy, const lm::DecodeConfig& decode, std::uint64_t seed) {
  std::vector<std::vector<TokenId>> inputs;
  for (const auto& p : toy.prompts) inputs.push_back(p.tokens);
  return lm::generate(toy.lm, inputs, decode, seed);
}

}  // namespace

TEST_CASE("ablate hand instance and identity") {
  const std::vector<double> x{1, 1}, d{0, 1};
  CHECK(ablate<double>(x, d, 2.0) == std::vector<double>{1, -1});
  CHECK(ablate<double>(x, d, 0.0) == x);
  CHECK_THROWS_AS(ablate<double>(x, std::vector<double>{1}, 1.0), ValidationError);
}

TEST_CASE("ablation algebra on random instances") {
  Rng rng(1);
  std::normal_distribution<double> dist;
  double worst = 0.0, worst_linear = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 64;
    std::vector<double> x(n), d(n);
    for (auto& v : x) v = 3.0 * dist(rng);
    for (auto& v : d) v = dist(rng);
    const double lambda = 10.0 * uniform01(rng), mu = 10.0 * uniform01(rng);
    const auto xp = ablate<double>(x, d, lambda);
    double xd = 0.0, xpd = 0.0, dd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      xd += x[i] * d[i];
      xpd += xp[i] * d[i];
      dd += d[i] * d[i];
    }
    worst = std::max(worst, std::abs(xpd - (xd - lambda * dd)));
    const auto once = ablate<double>(x, d, lambda + mu);
    const auto twice = ablate<double>(ablate<double>(x, d, lambda), d, mu);
    for (std::size_t i = 0; i < n; ++i) worst_linear = std::max(worst_linear, std::abs(once[i] - twice[i]));
  }
  CHECK(worst <= 1e-6);
  CHECK(worst_linear <= 1e-9);
}

TEST_CASE("zero lambda and an unreachable trigger leave generation bitwise unchanged") {
  const Toy toy = make_toy();
  lm::DecodeConfig decode;
  decode.max_new = 16;
  const auto base = plain(toy, decode, 11);
  const AblationSpec zero{0, 3, 0.0, PositionPolicy::all_generated};
  CHECK(generate_with_ablation(toy.lm, toy.sae, zero, toy.prompts, decode, 11) == base);
  const AblationSpec never{0, 3, 50.0, PositionPolicy::trigger_on_preact};
  CHECK(generate_with_ablation(toy.lm, toy.sae, never, toy.prompts, decode, 11) == base);

  const AblationSpec strong{0, 3, 50.0, PositionPolicy::all_generated};
  const auto ablated = generate_with_ablation(toy.lm, toy.sae, strong, toy.prompts, decode, 11);
  CHECK(ablated != base);
  AblationSpec always = strong;
  always.policy = PositionPolicy::trigger_on_preact;
  always.trigger_threshold = -std::numeric_limits<double>::infinity();
  CHECK(generate_with_ablation(toy.lm, toy.sae, always, toy.prompts, decode, 11) == ablated);
}

TEST_CASE("ablation leaves earlier positions untouched") {
  const Toy toy = make_toy();
  const auto& seq = toy.prompts[0].tokens;
  const AblationSpec spec{0, 7, 4.0, PositionPolicy::all_generated};
  const auto iv = make_intervention(toy.sae, spec, 3);
  const auto base = lm::forward(toy.lm, seq, {0});
  const auto edited = lm::forward(toy.lm, seq, {0}, &iv);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t v = 0; v < toy.vocab.size(); ++v) CHECK(edited.logits.at(t, v) == base.logits.at(t, v));
  const auto d = sae::feature_direction(toy.sae, 7);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(edited.captures.at(0).vectors.at(3, c) ==
          doctest::Approx(base.captures.at(0).vectors.at(3, c) - 4.0f * d[c]).epsilon(1e-6));
  }
}

TEST_CASE("ablation settings are validated") {
  const Toy toy = make_toy();
  CHECK_THROWS_AS(AblationSpec({1, 0, 1.0}).validate(toy.sae), ValidationError);
  CHECK_THROWS_AS(AblationSpec({0, 32, 1.0}).validate(toy.sae), ValidationError);
  CHECK_THROWS_AS(AblationSpec({0, 0, -1.0}).validate(toy.sae), ValidationError);
  CHECK(parse_position_policy(to_string(PositionPolicy::trigger_on_preact)) == PositionPolicy::trigger_on_preact);
  CHECK_THROWS_AS(parse_position_policy("sometimes"), ValidationError);
  auto uneven = toy.prompts;
  uneven[1].tokens.pop_back();
  CHECK_THROWS_AS(generate_with_ablation(toy.lm, toy.sae, {0, 0, 1.0}, uneven, {}, 1), ValidationError);
}

TEST_CASE("sweep rows cover every feature and lambda") {
  const Toy toy = make_toy();
  lm::DecodeConfig decode;
  decode.max_new = 10;
  const std::vector<SweepFeature> feats{{"target", 3}, {"control", 9}};
  const std::vector<double> lambdas{0, 1, 2, 4, 8};
  const auto rows =
      ablation_sweep(toy.lm, toy.sae, feats, lambdas, toy.prompts, toy.vocab, builtin_registry(), "synB", decode, 5);
  REQUIRE(rows.size() == 10);
  CHECK(rows[0].feature_role == "target");
  CHECK(rows[5].feature_role == "control");
  CHECK(rows[0].n_switched == rows[5].n_switched);
  CHECK(rows[0].cs_ratio == rows[5].cs_ratio);
  for (const auto& r : rows) CHECK(r.n_prompts == toy.prompts.size());

  std::vector<bool> flags;
  for (const auto& r : plain(toy, decode, 5)) flags.push_back(eval::switched(toy.vocab, builtin_registry(), "synB", r));
  CHECK(rows[0].n_switched == eval::cs_report("synB", flags).n_switched);

  const auto csv = sweep_csv(rows);
  CHECK(csv.rfind("feature_role,lambda,n_prompts,n_switched,cs_ratio\ntarget,0,24,", 0) == 0);
  const std::vector<double> one{1};
  CHECK_THROWS_AS(ablation_sweep(toy.lm, toy.sae, feats, one, toy.prompts, toy.vocab, builtin_registry(), "synB",
                                 decode, 5),
                  ValidationError);
}

TEST_CASE("sweep passes the position policy through") {
  const Toy toy = make_toy();
  lm::DecodeConfig decode;
  decode.max_new = 10;
  const std::vector<SweepFeature> feats{{"target", 3}};
  const std::vector<double> lambdas{0, 8};
  const auto rows = ablation_sweep(toy.lm, toy.sae, feats, lambdas, toy.prompts, toy.vocab, builtin_registry(),
                                   "synB", decode, 5, PositionPolicy::trigger_on_preact, 0.0);
  REQUIRE(rows.size() == 2);
  const AblationSpec spec{0, 3, 8, PositionPolicy::trigger_on_preact, 0.0};
  std::vector<bool> flags;
  for (const auto& r : generate_with_ablation(toy.lm, toy.sae, spec, toy.prompts, decode, 5))
    flags.push_back(eval::switched(toy.vocab, builtin_registry(), "synB", r));
  CHECK(rows[1].n_switched == eval::cs_report("synB", flags).n_switched);
}
