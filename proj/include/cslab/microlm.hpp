#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cslab/autodiff/checkpoint.hpp"
#include "cslab/autodiff/ops.hpp"
#include "cslab/corpus.hpp"
#include "cslab/util.hpp"

namespace cslab::lm {

using ad::Tensor;
using ad::Var;

struct LmConfig {
  std::size_t vocab = 70;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t ctx_len = 64;
  // Multiplies the embedding and every block output before it joins the residual stream.
  // Pre-norm blocks make the network function independent of it; it only sets the units
  // of the residual stream.
  double residual_scale = 1.0;

  void validate() const;
  friend bool operator==(const LmConfig&, const LmConfig&) = default;
};

std::string config_to_json(const LmConfig& cfg);
LmConfig config_from_json(std::string_view json);

template <typename T>
struct BlockParams {
  Tensor<T> ln1_gain, ln1_bias;
  // The key projection has no bias: softmax is invariant to it.
  Tensor<T> w_q, b_q, w_k, w_v, b_v;  // d × d
  Tensor<T> w_out, b_out;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> w_ff1, b_ff1;  // d × d_ff
  Tensor<T> w_ff2, b_ff2;  // d_ff × d

  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

template <typename T>
struct LmParams {
  LmConfig cfg;
  Tensor<T> tok_emb;  // vocab × d
  Tensor<T> pos_emb;  // ctx × d
  std::vector<BlockParams<T>> blocks;
  Tensor<T> lnf_gain, lnf_bias;
  Tensor<T> w_unembed, b_unembed;  // d × vocab

  // Visits every tensor in a fixed order with its checkpoint name.
  template <typename F>
  void for_each(F&& f);
  template <typename F>
  void for_each(F&& f) const;

  std::size_t tensor_count() const { return 6 + kTensorsPerBlock * blocks.size(); }
  static constexpr std::size_t kTensorsPerBlock = 15;

  template <typename U>
  LmParams<U> cast() const;
  friend bool operator==(const LmParams&, const LmParams&) = default;
};

// Normal(0, 0.02) weights, unit layer-norm gains, zero biases.
LmParams<float> init_lm(const LmConfig& cfg, Rng& rng);

std::vector<ad::NamedTensor> to_named(const LmParams<float>& params);
LmParams<float> from_named(const LmConfig& cfg, const std::vector<ad::NamedTensor>& tensors);
void save_lm(const std::filesystem::path& checkpoint, const LmParams<float>& params);
LmParams<float> load_lm(const std::filesystem::path& checkpoint);
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

// Leaves mirroring LmParams; gradients land on these after backward().
template <typename T>
struct LmVars {
  LmConfig cfg;
  std::vector<Var<T>> leaves;  // LmParams::for_each order
};

template <typename T>
LmVars<T> bind(const LmParams<T>& params, bool requires_grad);
// Copies leaf gradients back into an LmParams-shaped set (zeros where unreached).
template <typename T>
LmParams<T> gradients(const LmVars<T>& vars, const LmParams<T>& like);

// Rewrites residual rows in place. Called for each edited position of each sequence.
using ResidualEdit = std::function<void(std::size_t position, std::span<float> residual)>;

struct Intervention {
  std::size_t layer_index = 0;   // reverse-counted, 0 = final block
  std::size_t first_position = 0;  // rows at positions >= this are edited
  ResidualEdit edit;
};

// Graph-level hook: receives each block's output (reverse layer index) and returns the
// residual that flows on.
template <typename T>
using ResidualHook = std::function<Var<T>(std::size_t layer_index, const Var<T>& residual)>;

struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> ids;  // batch × seq row-major
};

template <typename T>
struct GraphOutputs {
  Var<T> logits;                  // (batch·seq) × vocab
  std::vector<Var<T>> residuals;  // indexed by reverse layer index
};

template <typename T>
GraphOutputs<T> forward_graph(const LmVars<T>& vars, const TokenBatch& tokens, const ResidualHook<T>& hook = {});

// Residuals after one block for every position of one sequence.
struct ResidualCapture {
  std::size_t layer_index = 0;
  std::vector<std::size_t> positions;
  Tensor<float> vectors;  // positions × d_model
};

struct ForwardResult {
  Tensor<float> logits;  // len × vocab
  std::map<std::size_t, ResidualCapture> captures;
};

ForwardResult forward(const LmParams<float>& params, std::span<const TokenId> tokens,
                      const std::set<std::size_t>& capture_layers = {}, const Intervention* intervention = nullptr);

// Batched variant for equal-length sequences; captures hold (batch·seq) rows.
struct BatchForwardResult {
  Tensor<float> logits;
  std::map<std::size_t, Tensor<float>> captures;
};
BatchForwardResult forward_batch(const LmParams<float>& params, const TokenBatch& tokens,
                                 const std::set<std::size_t>& capture_layers = {},
                                 const Intervention* intervention = nullptr);

struct TrainBatch {
  TokenBatch inputs;
  std::vector<TokenId> targets;  // same layout as inputs; -1 = no loss at this position
};

// Mean next-token cross-entropy over positions with a target.
template <typename T>
Var<T> lm_loss(const GraphOutputs<T>& out, const TrainBatch& batch);
template <typename T>
Var<T> lm_loss(const LmVars<T>& vars, const TrainBatch& batch);

// Sequences are BOS + document tokens. Targets before `first_target` are masked.
TrainBatch make_train_batch(std::span<const std::vector<TokenId>* const> sequences, std::size_t first_target = 0);

struct DecodeConfig {
  double top_p = 0.8;
  double temperature = 1.0;
  double repetition_penalty = 1.0;
  std::size_t max_new = 40;
};

// Renormalized nucleus over `probs` (zeros outside the support). Ties keep index order.
std::vector<double> nucleus(std::span<const double> probs, double top_p);
TokenId sample_token(std::span<const float> logits, std::span<const TokenId> history, const DecodeConfig& decode,
                     Rng& rng);

// Incremental decoder with a key/value cache, batched over sequences that share a
// position.
class Decoder {
 public:
  Decoder(const LmParams<float>& params, std::size_t batch);

  // Feeds one token per sequence; returns batch × vocab logits for the next token.
  const Tensor<float>& step(std::span<const TokenId> tokens, const Intervention* intervention = nullptr);
  std::size_t position() const { return pos_; }
  std::size_t batch() const { return batch_; }

 private:
  const LmParams<float>& params_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  std::vector<Tensor<float>> keys_, values_;  // per block: batch × ctx × d
  Tensor<float> logits_;
};

// One response (generated tokens only) per prompt. Prompt i draws from
// derive_rng(seed, i), so results do not depend on how prompts are grouped.
std::vector<std::vector<TokenId>> generate(const LmParams<float>& params,
                                           std::span<const std::vector<TokenId>> prompts, const DecodeConfig& decode,
                                           std::uint64_t seed, const Intervention* intervention = nullptr);

std::vector<TokenId> sample(const LmParams<float>& params, std::span<const TokenId> prompt, const DecodeConfig& decode,
                            Rng& rng, const Intervention* intervention = nullptr);

}  // namespace cslab::lm

#include "cslab/microlm_impl.hpp"
