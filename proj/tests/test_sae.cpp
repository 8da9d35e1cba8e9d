#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cslab/sae.hpp"
#include "oracles.hpp"

using namespace cslab;
using namespace cslab::sae;
using namespace cslab::testing;

namespace {

SaeParams<double> hand_sae() {
  // N = 2, M = 3
  return {0, Tensor<double>::matrix(3, 2, {1, 0, 0, 1, 1, 1}), Tensor<double>({3}),
          Tensor<double>::matrix(2, 3, {1, 0, 1, 0, 1, 1}), Tensor<double>({2})};
}

SaeParams<double> random_sae(std::size_t n, std::size_t m, Rng& rng) {
  std::normal_distribution<double> dist;
  SaeParams<double> p{1, Tensor<double>({m, n}), Tensor<double>({m}), Tensor<double>({n, m}), Tensor<double>({n})};
  for (auto* t : {&p.w_enc, &p.b_enc, &p.w_dec, &p.b_dec})
    for (auto& v : t->values()) v = dist(rng);
  return p;
}

}  // namespace

TEST_CASE("preact, act and reconstruct on hand instances") {
  const auto sae = hand_sae();
  const std::vector<double> x{2, 3};
  CHECK(preact<double>(sae, x) == std::vector<double>{2, 3, 5});
  CHECK(reconstruct<double>(sae, std::vector<double>{1, 2, 3}) == std::vector<double>{4, 5});

  auto constant = sae;
  constant.w_enc.fill(0.0);
  constant.b_enc = Tensor<double>::vector({-1, 0, 2});
  CHECK(preact<double>(constant, x) == std::vector<double>{-1, 0, 2});
  CHECK(act<double>(constant, x) == std::vector<double>{0, 0, 2});
  constant.b_enc = Tensor<double>::vector({-1, -2, -0.5});
  CHECK(act<double>(constant, x) == std::vector<double>{0, 0, 0});

  auto biased = sae;
  biased.b_enc = Tensor<double>::vector({0.5, -1, 3});
  CHECK(preact<double>(biased, std::vector<double>{0, 0}) == std::vector<double>{0.5, -1, 3});
  biased.b_dec = Tensor<double>::vector({7, -7});
  CHECK(reconstruct<double>(biased, std::vector<double>{0, 0, 0}) == std::vector<double>{7, -7});
  CHECK(reconstruct<double>(biased, std::vector<double>{0, 0, 1}) == std::vector<double>{8, -6});
}

TEST_CASE("dimension and index errors") {
  const auto sae = hand_sae();
  CHECK_THROWS_AS(preact<double>(sae, std::vector<double>{1, 2, 3}), ValidationError);
  CHECK_THROWS_AS(reconstruct<double>(sae, std::vector<double>{1, 2}), ValidationError);
  CHECK_THROWS_AS(feature_direction(sae, 3), ValidationError);
  CHECK(feature_direction(sae, 2) == std::vector<double>{1, 1});
}

TEST_CASE("act is relu of preact; batched preact matches per-vector preact") {
  Rng rng(3);
  const auto sae = random_sae(5, 12, rng);
  std::normal_distribution<double> dist;
  Tensor<double> rows({20, 5});
  for (auto& v : rows.values()) v = 10.0 * dist(rng);
  const auto batched = preact_rows(sae, rows);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto x = rows.row(r);
    const auto f = preact<double>(sae, x);
    const auto a = act<double>(sae, x);
    for (std::size_t s = 0; s < f.size(); ++s) {
      CHECK(a[s] == std::max(f[s], 0.0));
      CHECK(batched.at(r, s) == doctest::Approx(f[s]).epsilon(1e-12));
    }
    for (double v : reconstruct<double>(sae, a)) CHECK(std::isfinite(v));
  }
  for (std::size_t s = 0; s < sae.features(); ++s) {
    std::vector<double> onehot(sae.features(), 0.0);
    onehot[s] = 1.0;
    const auto xh = reconstruct<double>(sae, onehot);
    const auto d = feature_direction(sae, s);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(xh[i] - sae.b_dec[i] == doctest::Approx(d[i]).epsilon(1e-12));
  }
  const std::vector<std::size_t> pick{7, 2};
  const auto slice = feature_slice(sae, pick);
  CHECK(slice.w.shape() == std::vector<std::size_t>{2, 5});
  CHECK(slice.b[0] == sae.b_enc[7]);
  CHECK(slice.w.at(1, 4) == sae.w_enc.at(2, 4));
}

TEST_CASE("init_sae ties encoder to decoder with unit columns") {
  Rng rng(1);
  const std::vector<float> mean{1, 2, 3};
  const auto p = init_sae(3, 12, 0, mean, rng);
  CHECK(p.features() == 12);
  CHECK(p.width() == 3);
  CHECK(p.b_dec.values()[2] == 3.0f);
  for (std::size_t s = 0; s < 12; ++s) {
    double norm = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(p.w_enc.at(s, i) == p.w_dec.at(i, s));
      norm += static_cast<double>(p.w_dec.at(i, s)) * p.w_dec.at(i, s);
    }
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("planted dictionary is recovered") {
  Rng rng(2024);
  const auto planted = planted_data(16, 4096, 0.05, rng);
  SaeTrainConfig cfg;
  const auto result = train_sae(planted.data, 0, cfg, rng);
  CHECK(result.params.features() == 64);
  for (const auto& u : planted.directions) CHECK(max_abs_cos(result.params, u) >= 0.9);
  MESSAGE("mse " << result.initial_mse << " -> " << result.final_mse);
  CHECK(result.final_mse <= 0.1 * result.initial_mse);
  for (std::size_t s = 0; s < result.params.features(); ++s) {
    double norm = 0.0;
    for (float v : feature_direction(result.params, s)) norm += static_cast<double>(v) * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("stronger sparsity lowers mean L0") {
  Rng data_rng(7);
  const auto planted = planted_data(16, 2048, 0.05, data_rng);
  SaeTrainConfig cfg;
  cfg.steps = 600;
  cfg.sparsity_weight = 0.0;
  Rng r1(1), r2(1);
  const auto dense = train_sae(planted.data, 0, cfg, r1);
  cfg.sparsity_weight = 1.0;
  const auto sparse = train_sae(planted.data, 0, cfg, r2);
  const double l0_dense = mean_l0(dense.params, planted.data);
  const double l0_sparse = mean_l0(sparse.params, planted.data);
  MESSAGE("L0 " << l0_dense << " vs " << l0_sparse);
  CHECK(l0_sparse < l0_dense);
}

TEST_CASE("training is unit-free: scaled inputs give scaled pre-activations") {
  Rng data_rng(9);
  const auto planted = planted_data(8, 512, 0.05, data_rng);
  Tensor<float> big = planted.data;
  for (auto& v : big.values()) v *= 64.0f;  // power of two keeps the normalized inputs bitwise equal
  SaeTrainConfig cfg;
  cfg.steps = 100;
  Rng r1(5), r2(5);
  const auto a = train_sae(planted.data, 0, cfg, r1);
  const auto b = train_sae(big, 0, cfg, r2);
  CHECK(b.input_scale == doctest::Approx(64.0 * a.input_scale).epsilon(1e-9));
  CHECK(a.params.w_dec == b.params.w_dec);
  CHECK(a.params.w_enc == b.params.w_enc);
  const auto fa = preact_rows(a.params, planted.data);
  const auto fb = preact_rows(b.params, big);
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fb[i] == doctest::Approx(64.0 * fa[i]).epsilon(1e-4).scale(1e-3));
  CHECK(b.final_mse == doctest::Approx(64.0 * 64.0 * a.final_mse).epsilon(1e-4));
}

TEST_CASE("config validation and empty data") {
  SaeTrainConfig cfg;
  cfg.sparsity_weight = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.expansion = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  Rng rng(0);
  CHECK_THROWS_AS(train_sae(Tensor<float>({0, 4}), 0, SaeTrainConfig{}, rng), ValidationError);
}

TEST_CASE("checkpoint round trip with sidecar") {
  Rng rng(11);
  const auto p = random_sae(6, 24, rng).cast<float>();
  const auto dir = std::filesystem::temp_directory_path() / "cslab_test_sae";
  std::filesystem::remove_all(dir);
  const auto path = dir / "layer1.ckpt";
  save_sae(path, p);
  CHECK(std::filesystem::exists(dir / "layer1.ckpt.json"));
  CHECK(load_sae(path) == p);
  CHECK_THROWS_AS(load_sae(dir / "nope.ckpt"), MissingInputError);
  std::filesystem::remove_all(dir);
}
