#pragma once

#include <random>

#include "cslab/sasft.hpp"
#include "oracles.hpp"

namespace cslab::testing {

using ad::Tensor;
using namespace cslab::sasft;

inline lm::LmConfig micro_config() {
  lm::LmConfig cfg;
  cfg.vocab = 40;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.ctx_len = 16;
  return cfg;
}

inline lm::LmParams<float> lively_lm(const lm::LmConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  auto p = lm::init_lm(cfg, rng);
  std::normal_distribution<float> dist(0.0f, 0.3f);
  p.for_each([&](const std::string& name, Tensor<float>& t) {
    if (name.find("gain") == std::string::npos)
      for (auto& v : t.values()) v = dist(rng);
  });
  return p;
}

struct MicroSetup {
  lm::LmConfig cfg = micro_config();
  lm::LmParams<double> lm;
  lm::TrainBatch batch;
  BatchAnnotation ann;
  std::vector<AuxLayer<double>> layers;
  SasftConfig sc;
};

// 2 layers, d_model 16, vocab 40, batch 4, seq 16, one SAE layer with two features.
inline MicroSetup micro_setup() {
  MicroSetup m;
  m.lm = lively_lm(m.cfg, 21).cast<double>();
  Rng rng(9);
  std::vector<std::vector<TokenId>> seqs(4);
  for (auto& s : seqs)
    for (int t = 0; t < 17; ++t) s.push_back(static_cast<TokenId>(rng() % m.cfg.vocab));
  std::vector<const std::vector<TokenId>*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  m.batch = lm::make_train_batch(ptrs, 4);
  m.ann = {{"A", "B", "A", "C"}, 16, {}};
  for (TokenId t : m.batch.targets) m.ann.included.push_back(t >= 0 ? 1 : 0);

  const auto sae = random_sae_f(16, 64, 0, rng).cast<double>();
  langfeat::LanguageFeatureSet set{"B", 0, {5, 17}, {1.0, 0.5}, {}};
  // Thresholds near the middle of the pre-activation range keep both hinge sides in play.
  const auto out = lm::forward_graph(lm::bind(m.lm, false), m.batch.inputs);
  const auto f = sae::preact_rows(sae, out.residuals[0]->value);
  for (std::size_t c : set.features) {
    double mean = 0.0;
    for (std::size_t r = 0; r < f.rows(); ++r) mean += f.at(r, c);
    mean /= static_cast<double>(f.rows());
    set.thresholds.alpha[c] = {{"A", mean}, {"C", mean - 0.5}};
    set.thresholds.beta[c] = mean;
  }
  m.layers.push_back(make_aux_layer(sae, set));
  m.sc.mode = Mode::reduce;
  m.sc.target_language = "B";
  m.sc.layers = {0};
  return m;
}

}  // namespace cslab::testing
