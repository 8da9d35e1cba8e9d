#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "cslab/autodiff/checkpoint.hpp"
#include "cslab/autodiff/tensor.hpp"
#include "cslab/util.hpp"

namespace cslab::sae {

using ad::Tensor;

// ReLU sparse autoencoder over one layer's residual stream.
template <typename T>
struct SaeParams {
  std::size_t layer_index = 0;  // reverse-counted, matches lm::Intervention
  Tensor<T> w_enc;              // M × N
  Tensor<T> b_enc;              // M
  Tensor<T> w_dec;              // N × M, unit-norm columns
  Tensor<T> b_dec;              // N

  std::size_t features() const { return w_enc.rows(); }
  std::size_t width() const { return w_enc.cols(); }
  void validate() const;

  template <typename U>
  SaeParams<U> cast() const {
    return {layer_index, w_enc.template cast<U>(), b_enc.template cast<U>(), w_dec.template cast<U>(),
            b_dec.template cast<U>()};
  }
  friend bool operator==(const SaeParams&, const SaeParams&) = default;
};

template <typename T>
std::vector<T> preact(const SaeParams<T>& sae, std::span<const T> x);
template <typename T>
std::vector<T> act(const SaeParams<T>& sae, std::span<const T> x);
template <typename T>
std::vector<T> reconstruct(const SaeParams<T>& sae, std::span<const T> a);
template <typename T>
std::vector<T> feature_direction(const SaeParams<T>& sae, std::size_t feature);

// Row-wise pre-activations: rows × N in, rows × M out.
template <typename T>
Tensor<T> preact_rows(const SaeParams<T>& sae, const Tensor<T>& rows);

// Encoder rows and biases for a feature subset, for building graph-side pre-activations.
template <typename T>
struct FeatureSlice {
  Tensor<T> w;  // k × N
  Tensor<T> b;  // k
};
template <typename T>
FeatureSlice<T> feature_slice(const SaeParams<T>& sae, std::span<const std::size_t> features);

struct SaeTrainConfig {
  double sparsity_weight = 1.0;  // in units of the normalized (unit-RMS) inputs
  double lr = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch = 256;
  std::size_t expansion = 4;

  void validate() const;
};

struct SaeTrainResult {
  SaeParams<float> params;
  // Inputs were divided by this during training; the returned parameters are already
  // expressed in raw residual units.
  double input_scale = 1.0;
  double initial_mse = 0.0;
  double final_mse = 0.0;
};

// W_dec columns random unit vectors, W_enc = W_decᵀ, b_enc = 0, b_dec = `mean`.
SaeParams<float> init_sae(std::size_t width, std::size_t features, std::size_t layer_index,
                          std::span<const float> mean, Rng& rng);

// Adam on mean ‖x − x̂‖² + sparsity_weight·‖a‖₁ over minibatches of `residuals` (rows × N),
// renormalizing decoder columns after every step. Training runs on inputs divided by
// their centered RMS so the sparsity weight does not depend on residual units.
SaeTrainResult train_sae(const Tensor<float>& residuals, std::size_t layer_index, const SaeTrainConfig& cfg,
                         Rng& rng);

// Mean squared reconstruction error per vector (summed over coordinates).
double reconstruction_mse(const SaeParams<float>& sae, const Tensor<float>& residuals);
// Mean number of active features per vector.
double mean_l0(const SaeParams<float>& sae, const Tensor<float>& residuals);

std::vector<ad::NamedTensor> to_named(const SaeParams<float>& sae);
void save_sae(const std::filesystem::path& checkpoint, const SaeParams<float>& sae);
SaeParams<float> load_sae(const std::filesystem::path& checkpoint);

}  // namespace cslab::sae
