#include "cslab/sae.hpp"

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <nlohmann/json.hpp>

#include "cslab/autodiff/ops.hpp"
#include "cslab/autodiff/optim.hpp"

namespace cslab::sae {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<const Mat<T>> as_mat(const Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
template <typename T>
Eigen::Map<const Vec<T>> as_vec(std::span<const T> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}
template <typename T>
std::vector<T> to_vector(const Vec<T>& v) {
  return {v.data(), v.data() + v.size()};
}

void check_width(std::string_view what, std::size_t got, std::size_t want) {
  if (got != want) {
    throw ValidationError(std::string(what) + ": expected length " + std::to_string(want) + ", got " +
                          std::to_string(got));
  }
}

}  // namespace

template <typename T>
void SaeParams<T>::validate() const {
  const std::size_t m = w_enc.rows(), n = w_enc.cols();
  if (w_enc.rank() != 2 || m == 0 || n == 0) throw ValidationError("sae: W_enc must be a non-empty matrix");
  if (b_enc.size() != m || w_dec.rank() != 2 || w_dec.rows() != n || w_dec.cols() != m || b_dec.size() != n) {
    throw ValidationError("sae: inconsistent shapes W_enc " + w_enc.shape_str() + ", b_enc " + b_enc.shape_str() +
                          ", W_dec " + w_dec.shape_str() + ", b_dec " + b_dec.shape_str());
  }
}

template <typename T>
std::vector<T> preact(const SaeParams<T>& sae, std::span<const T> x) {
  check_width("sae preact", x.size(), sae.width());
  return to_vector<T>(as_mat(sae.w_enc) * as_vec(x) + as_vec(sae.b_enc.values()));
}

template <typename T>
std::vector<T> act(const SaeParams<T>& sae, std::span<const T> x) {
  auto f = preact(sae, x);
  for (auto& v : f) v = std::max(v, T(0));
  return f;
}

template <typename T>
std::vector<T> reconstruct(const SaeParams<T>& sae, std::span<const T> a) {
  check_width("sae reconstruct", a.size(), sae.features());
  return to_vector<T>(as_mat(sae.w_dec) * as_vec(a) + as_vec(sae.b_dec.values()));
}

template <typename T>
std::vector<T> feature_direction(const SaeParams<T>& sae, std::size_t feature) {
  if (feature >= sae.features()) {
    throw ValidationError("sae: feature " + std::to_string(feature) + " out of range (M = " +
                          std::to_string(sae.features()) + ")");
  }
  return to_vector<T>(as_mat(sae.w_dec).col(static_cast<Eigen::Index>(feature)));
}

template <typename T>
Tensor<T> preact_rows(const SaeParams<T>& sae, const Tensor<T>& rows) {
  check_width("sae preact_rows", rows.cols(), sae.width());
  Tensor<T> out({rows.rows(), sae.features()});
  Eigen::Map<Mat<T>> o(out.data(), static_cast<Eigen::Index>(out.rows()), static_cast<Eigen::Index>(out.cols()));
  o.noalias() = as_mat(rows) * as_mat(sae.w_enc).transpose();
  o.rowwise() += as_vec(sae.b_enc.values()).transpose();
  return out;
}

template <typename T>
FeatureSlice<T> feature_slice(const SaeParams<T>& sae, std::span<const std::size_t> features) {
  FeatureSlice<T> s{Tensor<T>({features.size(), sae.width()}), Tensor<T>({features.size()})};
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i] >= sae.features()) throw ValidationError("sae: feature index out of range");
    const auto src = sae.w_enc.row(features[i]);
    std::copy(src.begin(), src.end(), s.w.row(i).begin());
    s.b[i] = sae.b_enc[features[i]];
  }
  return s;
}

void SaeTrainConfig::validate() const {
  if (!(sparsity_weight >= 0.0)) throw ValidationError("sae train: sparsity_weight must be >= 0");
  if (!(lr > 0.0)) throw ValidationError("sae train: lr must be positive");
  if (batch == 0) throw ValidationError("sae train: batch must be >= 1");
  if (expansion < 2) throw ValidationError("sae train: expansion must be >= 2 so that M > N");
}

SaeParams<float> init_sae(std::size_t width, std::size_t features, std::size_t layer_index,
                          std::span<const float> mean, Rng& rng) {
  check_width("sae init mean", mean.size(), width);
  SaeParams<float> p{layer_index, Tensor<float>({features, width}), Tensor<float>({features}),
                     Tensor<float>({width, features}), Tensor<float>({width}, std::vector<float>(mean.begin(), mean.end()))};
  std::normal_distribution<double> normal;
  for (std::size_t s = 0; s < features; ++s) {
    std::vector<double> col(width);
    double norm = 0.0;
    for (auto& v : col) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < width; ++i) {
      const auto v = static_cast<float>(col[i] / norm);
      p.w_dec.at(i, s) = v;
      p.w_enc.at(s, i) = v;
    }
  }
  return p;
}

namespace {

void normalize_columns(Tensor<float>& w_dec) {
  Eigen::Map<Mat<float>> w(w_dec.data(), static_cast<Eigen::Index>(w_dec.rows()),
                           static_cast<Eigen::Index>(w_dec.cols()));
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    const float n = w.col(c).norm();
    if (n > 0.0f) w.col(c) /= n;
  }
}

}  // namespace

double reconstruction_mse(const SaeParams<float>& sae, const Tensor<float>& residuals) {
  if (residuals.rows() == 0) throw ValidationError("sae: empty residual set");
  Mat<float> a = as_mat(preact_rows(sae, residuals)).cwiseMax(0.0f);
  Mat<float> xh = a * as_mat(sae.w_dec).transpose();
  xh.rowwise() += as_vec(sae.b_dec.values()).transpose();
  return (xh - as_mat(residuals)).cast<double>().squaredNorm() / static_cast<double>(residuals.rows());
}

double mean_l0(const SaeParams<float>& sae, const Tensor<float>& residuals) {
  if (residuals.rows() == 0) throw ValidationError("sae: empty residual set");
  const Tensor<float> f = preact_rows(sae, residuals);
  std::size_t active = 0;
  for (float v : f.values()) active += v > 0.0f ? 1 : 0;
  return static_cast<double>(active) / static_cast<double>(residuals.rows());
}

SaeTrainResult train_sae(const Tensor<float>& residuals, std::size_t layer_index, const SaeTrainConfig& cfg,
                         Rng& rng) {
  cfg.validate();
  const std::size_t rows = residuals.rows(), n = residuals.cols();
  if (residuals.rank() != 2 || rows == 0) throw ValidationError("sae train: empty residual set");

  const Vec<double> mean = as_mat(residuals).cast<double>().colwise().mean().transpose();
  const double centered =
      (as_mat(residuals).cast<double>().rowwise() - mean.transpose()).squaredNorm() / static_cast<double>(rows * n);
  const double scale = centered > 0.0 ? std::sqrt(centered) : 1.0;
  Tensor<float> x = residuals;
  for (auto& v : x.values()) v = static_cast<float>(v / scale);
  std::vector<float> mean_scaled(n);
  for (std::size_t i = 0; i < n; ++i) mean_scaled[i] = static_cast<float>(mean[static_cast<Eigen::Index>(i)] / scale);

  SaeParams<float> p = init_sae(n, cfg.expansion * n, layer_index, mean_scaled, rng);
  const double initial_mse = reconstruction_mse(p, x) * scale * scale;

  std::array<Tensor<float>*, 4> params{&p.w_enc, &p.b_enc, &p.w_dec, &p.b_dec};
  ad::AdamState<float> state;
  const ad::AdamConfig adam;
  const std::size_t b = std::min(cfg.batch, rows);
  Tensor<float> xb({b, n});
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t r = 0; r < b; ++r) {
      const auto src = x.row(std::min(rows - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(rows))));
      std::copy(src.begin(), src.end(), xb.row(r).begin());
    }
    std::array<ad::Var<float>, 4> leaves;
    for (std::size_t i = 0; i < 4; ++i) leaves[i] = ad::leaf(*params[i]);
    const auto xin = ad::constant(xb);
    const auto a = ad::relu(ad::add(ad::matmul_nt(xin, leaves[0]), leaves[1]));
    const auto diff = ad::sub(xin, ad::add(ad::matmul_nt(a, leaves[2]), leaves[3]));
    const float inv_b = 1.0f / static_cast<float>(b);
    const auto loss = ad::add(ad::scale(ad::sum(ad::mul(diff, diff)), inv_b),
                              ad::scale(ad::sum(a), static_cast<float>(cfg.sparsity_weight) * inv_b));
    if (!std::isfinite(loss->value.item())) {
      throw NumericError("sae train: non-finite loss at step " + std::to_string(step));
    }
    ad::backward(loss);
    std::array<const Tensor<float>*, 4> grads;
    for (std::size_t i = 0; i < 4; ++i) grads[i] = &leaves[i]->grad;
    ad::adam_step<float>(params, grads, state, adam, cfg.lr);
    normalize_columns(p.w_dec);
  }

  // f_raw = W_enc·x + scale·b_enc and x̂_raw = W_dec·a_raw + scale·b_dec reproduce the
  // normalized model exactly in raw units.
  for (auto& v : p.b_enc.values()) v = static_cast<float>(v * scale);
  for (auto& v : p.b_dec.values()) v = static_cast<float>(v * scale);
  SaeTrainResult result{std::move(p), scale, initial_mse, 0.0};
  result.final_mse = reconstruction_mse(result.params, residuals);
  return result;
}

std::vector<ad::NamedTensor> to_named(const SaeParams<float>& sae) {
  return {{"W_enc", sae.w_enc}, {"b_enc", sae.b_enc}, {"W_dec", sae.w_dec}, {"b_dec", sae.b_dec}};
}

namespace {

std::filesystem::path sae_sidecar(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

}  // namespace

void save_sae(const std::filesystem::path& checkpoint, const SaeParams<float>& sae) {
  sae.validate();
  ad::save_checkpoint(checkpoint, to_named(sae));
  const nlohmann::json side = {{"layer_index", sae.layer_index}, {"M", sae.features()}, {"N", sae.width()}};
  write_file(sae_sidecar(checkpoint), side.dump(2) + "\n");
}

SaeParams<float> load_sae(const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) throw MissingInputError("missing SAE checkpoint: " + checkpoint.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file(sae_sidecar(checkpoint)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("sae sidecar: " + std::string(e.what()));
  }
  const auto tensors = ad::load_checkpoint(checkpoint);
  SaeParams<float> sae{side.at("layer_index").get<std::size_t>(), ad::find_tensor(tensors, "W_enc"),
                       ad::find_tensor(tensors, "b_enc"), ad::find_tensor(tensors, "W_dec"),
                       ad::find_tensor(tensors, "b_dec")};
  sae.validate();
  if (sae.features() != side.at("M").get<std::size_t>() || sae.width() != side.at("N").get<std::size_t>()) {
    throw ValidationError("sae sidecar: M/N disagree with checkpoint shapes");
  }
  return sae;
}

#define CSLAB_INSTANTIATE(T)                                                                       \
  template struct SaeParams<T>;                                                                    \
  template std::vector<T> preact(const SaeParams<T>&, std::span<const T>);                         \
  template std::vector<T> act(const SaeParams<T>&, std::span<const T>);                            \
  template std::vector<T> reconstruct(const SaeParams<T>&, std::span<const T>);                    \
  template std::vector<T> feature_direction(const SaeParams<T>&, std::size_t);                     \
  template Tensor<T> preact_rows(const SaeParams<T>&, const Tensor<T>&);                           \
  template FeatureSlice<T> feature_slice(const SaeParams<T>&, std::span<const std::size_t>);

CSLAB_INSTANTIATE(float)
CSLAB_INSTANTIATE(double)

}  // namespace cslab::sae
