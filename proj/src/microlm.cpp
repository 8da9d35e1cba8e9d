#include "cslab/microlm.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

namespace cslab::lm {

using nlohmann::json;

void LmConfig::validate() const {
  if (vocab < 2) throw ValidationError("lm config: vocab must be >= 2");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ValidationError("lm config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
  }
  if (n_layers == 0) throw ValidationError("lm config: n_layers must be >= 1");
  if (d_ff == 0) throw ValidationError("lm config: d_ff must be >= 1");
  if (ctx_len < 2) throw ValidationError("lm config: ctx_len must be >= 2");
  if (!(residual_scale > 0.0) || !std::isfinite(residual_scale)) {
    throw ValidationError("lm config: residual_scale must be positive");
  }
}

std::string config_to_json(const LmConfig& cfg) {
  const json j = {{"vocab", cfg.vocab},       {"d_model", cfg.d_model}, {"n_layers", cfg.n_layers},
                  {"n_heads", cfg.n_heads},   {"d_ff", cfg.d_ff},       {"ctx_len", cfg.ctx_len},
                  {"dropout", 0},             {"residual_scale", cfg.residual_scale}};
  return j.dump(2) + "\n";
}

LmConfig config_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    LmConfig cfg;
    cfg.vocab = j.at("vocab").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.d_ff = j.at("d_ff").get<std::size_t>();
    cfg.ctx_len = j.at("ctx_len").get<std::size_t>();
    cfg.residual_scale = j.value("residual_scale", 1.0);
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("lm config: ") + e.what());
  }
}

namespace {

Tensor<float> normal_tensor(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor<float> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<float>(dist(rng));
  return t;
}

}  // namespace

LmParams<float> init_lm(const LmConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr double kStd = 0.02;
  const std::size_t d = cfg.d_model;
  LmParams<float> p;
  p.cfg = cfg;
  p.tok_emb = normal_tensor({cfg.vocab, d}, kStd, rng);
  p.pos_emb = normal_tensor({cfg.ctx_len, d}, kStd, rng);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    BlockParams<float> b;
    b.ln1_gain = Tensor<float>({d}, 1.0f);
    b.ln1_bias = Tensor<float>({d});
    b.w_q = normal_tensor({d, d}, kStd, rng);
    b.b_q = Tensor<float>({d});
    b.w_k = normal_tensor({d, d}, kStd, rng);
    b.w_v = normal_tensor({d, d}, kStd, rng);
    b.b_v = Tensor<float>({d});
    b.w_out = normal_tensor({d, d}, kStd, rng);
    b.b_out = Tensor<float>({d});
    b.ln2_gain = Tensor<float>({d}, 1.0f);
    b.ln2_bias = Tensor<float>({d});
    b.w_ff1 = normal_tensor({d, cfg.d_ff}, kStd, rng);
    b.b_ff1 = Tensor<float>({cfg.d_ff});
    b.w_ff2 = normal_tensor({cfg.d_ff, d}, kStd, rng);
    b.b_ff2 = Tensor<float>({d});
    p.blocks.push_back(std::move(b));
  }
  p.lnf_gain = Tensor<float>({d}, 1.0f);
  p.lnf_bias = Tensor<float>({d});
  p.w_unembed = normal_tensor({d, cfg.vocab}, kStd, rng);
  p.b_unembed = Tensor<float>({cfg.vocab});
  return p;
}

std::vector<ad::NamedTensor> to_named(const LmParams<float>& params) {
  std::vector<ad::NamedTensor> out;
  params.for_each([&](const std::string& name, const Tensor<float>& t) { out.push_back({name, t}); });
  return out;
}

LmParams<float> from_named(const LmConfig& cfg, const std::vector<ad::NamedTensor>& tensors) {
  cfg.validate();
  Rng unused(0);
  LmParams<float> p = init_lm(cfg, unused);
  p.for_each([&](const std::string& name, Tensor<float>& t) {
    const Tensor<float>& src = ad::find_tensor(tensors, name);
    if (!src.same_shape(t)) {
      throw ValidationError("lm checkpoint: tensor " + name + " has shape " + src.shape_str() + ", expected " +
                            t.shape_str());
    }
    t = src;
  });
  return p;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

void save_lm(const std::filesystem::path& checkpoint, const LmParams<float>& params) {
  ad::save_checkpoint(checkpoint, to_named(params));
  write_file(sidecar_path(checkpoint), config_to_json(params.cfg));
}

LmParams<float> load_lm(const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) throw MissingInputError("missing LM checkpoint: " + checkpoint.string());
  const LmConfig cfg = config_from_json(read_file(sidecar_path(checkpoint)));
  return from_named(cfg, ad::load_checkpoint(checkpoint));
}

template <typename T>
LmVars<T> bind(const LmParams<T>& params, bool requires_grad) {
  LmVars<T> vars;
  vars.cfg = params.cfg;
  params.for_each([&](const std::string&, const Tensor<T>& t) { vars.leaves.push_back(ad::leaf(t, requires_grad)); });
  return vars;
}

template <typename T>
LmParams<T> gradients(const LmVars<T>& vars, const LmParams<T>& like) {
  LmParams<T> g = like;
  std::size_t k = 0;
  g.for_each([&](const std::string&, Tensor<T>& t) {
    const auto& grad = vars.leaves[k++]->grad;
    if (grad.empty()) {
      t.fill(T(0));
    } else {
      t = grad;
    }
  });
  return g;
}

template <typename T>
GraphOutputs<T> forward_graph(const LmVars<T>& vars, const TokenBatch& tokens, const ResidualHook<T>& hook) {
  const LmConfig& cfg = vars.cfg;
  if (tokens.seq == 0 || tokens.seq > cfg.ctx_len) {
    throw ValidationError("forward: sequence length " + std::to_string(tokens.seq) + " outside [1, " +
                          std::to_string(cfg.ctx_len) + "]");
  }
  if (tokens.ids.size() != tokens.batch * tokens.seq) throw ValidationError("forward: token batch has wrong size");
  for (TokenId id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
      throw std::out_of_range("forward: token id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(cfg.vocab));
    }
  }
  const auto& L = vars.leaves;
  std::vector<std::int32_t> positions(tokens.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % tokens.seq);
  const T c = static_cast<T>(cfg.residual_scale);
  const bool scaled = cfg.residual_scale != 1.0;
  auto rescale = [&](const Var<T>& v) { return scaled ? ad::scale(v, c) : v; };

  Var<T> x = rescale(ad::add(ad::gather_rows(L[0], tokens.ids), ad::gather_rows(L[1], positions)));
  GraphOutputs<T> out;
  out.residuals.resize(cfg.n_layers);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const auto* b = &L[2 + LmParams<T>::kTensorsPerBlock * i];
    Var<T> h = ad::layer_norm(x, b[0], b[1]);
    Var<T> q = ad::add(ad::matmul(h, b[2]), b[3]);
    Var<T> k = ad::matmul(h, b[4]);
    Var<T> v = ad::add(ad::matmul(h, b[5]), b[6]);
    Var<T> attn = ad::causal_attention(q, k, v, tokens.batch, tokens.seq, cfg.n_heads);
    x = ad::add(x, rescale(ad::add(ad::matmul(attn, b[7]), b[8])));
    Var<T> h2 = ad::layer_norm(x, b[9], b[10]);
    Var<T> ff = ad::add(ad::matmul(ad::relu(ad::add(ad::matmul(h2, b[11]), b[12])), b[13]), b[14]);
    x = ad::add(x, rescale(ff));
    const std::size_t layer_index = cfg.n_layers - 1 - i;
    if (hook) x = hook(layer_index, x);
    out.residuals[layer_index] = x;
  }
  const auto* f = &L[2 + LmParams<T>::kTensorsPerBlock * cfg.n_layers];
  out.logits = ad::add(ad::matmul(ad::layer_norm(x, f[0], f[1]), f[2]), f[3]);
  return out;
}

BatchForwardResult forward_batch(const LmParams<float>& params, const TokenBatch& tokens,
                                 const std::set<std::size_t>& capture_layers, const Intervention* intervention) {
  for (std::size_t layer : capture_layers) {
    if (layer >= params.cfg.n_layers) throw ValidationError("forward: capture layer out of range");
  }
  if (intervention != nullptr && intervention->layer_index >= params.cfg.n_layers) {
    throw ValidationError("forward: intervention layer out of range");
  }
  const LmVars<float> vars = bind(params, false);
  ResidualHook<float> hook;
  if (intervention != nullptr && intervention->edit) {
    hook = [&](std::size_t layer, const Var<float>& x) -> Var<float> {
      if (layer != intervention->layer_index) return x;
      Tensor<float> edited = x->value;
      for (std::size_t b = 0; b < tokens.batch; ++b) {
        for (std::size_t t = intervention->first_position; t < tokens.seq; ++t) {
          intervention->edit(t, edited.row(b * tokens.seq + t));
        }
      }
      return ad::constant(std::move(edited));
    };
  }
  GraphOutputs<float> g = forward_graph(vars, tokens, hook);
  BatchForwardResult result;
  result.logits = std::move(g.logits->value);
  for (std::size_t layer : capture_layers) result.captures[layer] = g.residuals[layer]->value;
  return result;
}

ForwardResult forward(const LmParams<float>& params, std::span<const TokenId> tokens,
                      const std::set<std::size_t>& capture_layers, const Intervention* intervention) {
  TokenBatch batch{1, tokens.size(), std::vector<TokenId>(tokens.begin(), tokens.end())};
  BatchForwardResult r = forward_batch(params, batch, capture_layers, intervention);
  ForwardResult out;
  out.logits = std::move(r.logits);
  for (auto& [layer, vectors] : r.captures) {
    ResidualCapture cap;
    cap.layer_index = layer;
    cap.positions.resize(tokens.size());
    std::iota(cap.positions.begin(), cap.positions.end(), std::size_t{0});
    cap.vectors = std::move(vectors);
    out.captures.emplace(layer, std::move(cap));
  }
  return out;
}

template <typename T>
Var<T> lm_loss(const GraphOutputs<T>& out, const TrainBatch& batch) {
  return ad::cross_entropy_with_logits(out.logits, batch.targets);
}

template <typename T>
Var<T> lm_loss(const LmVars<T>& vars, const TrainBatch& batch) {
  return lm_loss(forward_graph(vars, batch.inputs), batch);
}

TrainBatch make_train_batch(std::span<const std::vector<TokenId>* const> sequences, std::size_t first_target) {
  if (sequences.empty()) throw ValidationError("train batch: no sequences");
  const std::size_t len = sequences.front()->size();
  if (len < 2) throw ValidationError("train batch: sequences need at least 2 tokens");
  TrainBatch b;
  b.inputs.batch = sequences.size();
  b.inputs.seq = len - 1;
  b.inputs.ids.reserve(b.inputs.batch * b.inputs.seq);
  b.targets.reserve(b.inputs.batch * b.inputs.seq);
  for (const auto* s : sequences) {
    if (s->size() != len) throw ValidationError("train batch: sequences differ in length");
    for (std::size_t t = 0; t + 1 < len; ++t) {
      b.inputs.ids.push_back((*s)[t]);
      b.targets.push_back(t < first_target ? -1 : (*s)[t + 1]);
    }
  }
  return b;
}

namespace {

std::vector<std::size_t> support_order(std::span<const double> probs, double top_p, std::size_t& keep) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  keep = 0;
  while (keep < order.size()) {
    mass += probs[order[keep]];
    ++keep;
    if (mass >= top_p) break;
  }
  return order;
}

}  // namespace

std::vector<double> nucleus(std::span<const double> probs, double top_p) {
  std::size_t keep = 0;
  const auto order = support_order(probs, top_p, keep);
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += probs[order[i]];
  std::vector<double> out(probs.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = probs[order[i]] / mass;
  return out;
}

TokenId sample_token(std::span<const float> logits, std::span<const TokenId> history, const DecodeConfig& decode,
                     Rng& rng) {
  std::vector<double> z(logits.begin(), logits.end());
  if (decode.repetition_penalty != 1.0) {
    std::vector<bool> seen(z.size(), false);
    for (TokenId t : history) {
      if (t >= 0 && static_cast<std::size_t>(t) < z.size()) seen[static_cast<std::size_t>(t)] = true;
    }
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (seen[i]) z[i] = z[i] > 0 ? z[i] / decode.repetition_penalty : z[i] * decode.repetition_penalty;
    }
  }
  if (decode.temperature <= 0.0) {
    return static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) total += (v = std::exp((v - mx) / decode.temperature));
  for (auto& v : z) v /= total;
  std::size_t keep = 0;
  const auto order = support_order(z, decode.top_p, keep);
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += z[order[i]];
  const double u = uniform01(rng) * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += z[order[i]];
    if (u < acc) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[keep - 1]);
}

namespace {

void generate_group(const LmParams<float>& params, std::span<const std::vector<TokenId>> prompts,
                    std::span<const std::size_t> indices, const DecodeConfig& decode, std::uint64_t seed,
                    const Intervention* intervention, std::vector<std::vector<TokenId>>& out) {
  const std::size_t n = indices.size();
  const std::size_t plen = prompts[indices[0]].size();
  Decoder dec(params, n);
  std::vector<Rng> rngs;
  std::vector<std::vector<TokenId>> history(n);
  for (std::size_t i = 0; i < n; ++i) {
    rngs.push_back(derive_rng(seed, indices[i]));
    history[i] = prompts[indices[i]];
  }
  std::vector<TokenId> feed(n);
  const Tensor<float>* logits = nullptr;
  for (std::size_t t = 0; t < plen; ++t) {
    for (std::size_t i = 0; i < n; ++i) feed[i] = history[i][t];
    logits = &dec.step(feed, intervention);
  }
  for (std::size_t k = 0; k < decode.max_new; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const TokenId next = sample_token(logits->row(i), history[i], decode, rngs[i]);
      history[i].push_back(next);
      out[indices[i]].push_back(next);
      feed[i] = next;
    }
    if (k + 1 < decode.max_new) logits = &dec.step(feed, intervention);
  }
}

}  // namespace

std::vector<std::vector<TokenId>> generate(const LmParams<float>& params,
                                           std::span<const std::vector<TokenId>> prompts, const DecodeConfig& decode,
                                           std::uint64_t seed, const Intervention* intervention) {
  constexpr std::size_t kChunk = 256;
  std::vector<std::vector<TokenId>> out(prompts.size());
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (prompts[i].empty()) throw ValidationError("generate: empty prompt");
    if (prompts[i].size() + decode.max_new > params.cfg.ctx_len + 1) {
      throw ValidationError("generate: prompt plus max_new exceeds the context length");
    }
    by_length[prompts[i].size()].push_back(i);
  }
  for (const auto& [len, indices] : by_length) {
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
      const std::size_t count = std::min(kChunk, indices.size() - start);
      generate_group(params, prompts, std::span(indices).subspan(start, count), decode, seed, intervention, out);
    }
  }
  return out;
}

std::vector<TokenId> sample(const LmParams<float>& params, std::span<const TokenId> prompt, const DecodeConfig& decode,
                            Rng& rng, const Intervention* intervention) {
  if (prompt.empty()) throw ValidationError("sample: empty prompt");
  if (prompt.size() + decode.max_new > params.cfg.ctx_len + 1) {
    throw ValidationError("sample: prompt plus max_new exceeds the context length");
  }
  Decoder dec(params, 1);
  std::vector<TokenId> history(prompt.begin(), prompt.end());
  std::vector<TokenId> generated;
  const Tensor<float>* logits = nullptr;
  for (TokenId t : prompt) logits = &dec.step(std::span(&t, 1), intervention);
  for (std::size_t k = 0; k < decode.max_new; ++k) {
    const TokenId next = sample_token(logits->row(0), history, decode, rng);
    history.push_back(next);
    generated.push_back(next);
    if (k + 1 < decode.max_new) logits = &dec.step(std::span(&next, 1), intervention);
  }
  return generated;
}

template LmVars<float> bind(const LmParams<float>&, bool);
template LmVars<double> bind(const LmParams<double>&, bool);
template LmParams<float> gradients(const LmVars<float>&, const LmParams<float>&);
template LmParams<double> gradients(const LmVars<double>&, const LmParams<double>&);
template GraphOutputs<float> forward_graph(const LmVars<float>&, const TokenBatch&, const ResidualHook<float>&);
template GraphOutputs<double> forward_graph(const LmVars<double>&, const TokenBatch&, const ResidualHook<double>&);
template Var<float> lm_loss(const GraphOutputs<float>&, const TrainBatch&);
template Var<double> lm_loss(const GraphOutputs<double>&, const TrainBatch&);
template Var<float> lm_loss(const LmVars<float>&, const TrainBatch&);
template Var<double> lm_loss(const LmVars<double>&, const TrainBatch&);

}  // namespace cslab::lm
