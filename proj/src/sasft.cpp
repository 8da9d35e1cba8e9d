#include "cslab/sasft.hpp"

#include <cmath>

#include "cslab/autodiff/optim.hpp"

namespace cslab::sasft {

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::sft_only: return "sft_only";
    case Mode::reduce: return "reduce";
    case Mode::reduce_zero: return "reduce_zero";
    case Mode::enhance: return "enhance";
  }
  return "?";
}

Mode parse_mode(std::string_view s) {
  for (Mode m : {Mode::sft_only, Mode::reduce, Mode::reduce_zero, Mode::enhance}) {
    if (s == to_string(m)) return m;
  }
  throw ValidationError("unknown sasft mode: " + std::string(s));
}

void SasftConfig::validate() const {
  if (!(aux_weight >= 0.0) || !std::isfinite(aux_weight)) throw ValidationError("sasft: aux_weight must be >= 0");
  if (!(lr > 0.0)) throw ValidationError("sasft: lr must be positive");
  if (weight_decay < 0.0) throw ValidationError("sasft: weight_decay must be >= 0");
  if (batch == 0) throw ValidationError("sasft: batch must be >= 1");
  if (mode != Mode::sft_only) {
    if (layers.empty()) throw ValidationError("sasft: layers must be non-empty unless mode is sft_only");
    if (features_per_layer == 0) throw ValidationError("sasft: features_per_layer must be >= 1");
    if (target_language.empty()) throw ValidationError("sasft: target_language is required");
  }
}

template <typename T>
AuxLayer<T> make_aux_layer(const sae::SaeParams<T>& sae, const langfeat::LanguageFeatureSet& set) {
  if (set.layer_index != sae.layer_index) {
    throw ValidationError("sasft: feature set for layer " + std::to_string(set.layer_index) + " paired with SAE for layer " +
                          std::to_string(sae.layer_index));
  }
  return {sae.layer_index, set.features, sae::feature_slice(sae, set.features), set.thresholds};
}

template <typename T>
Var<T> feature_preacts(const Var<T>& residual, const AuxLayer<T>& layer) {
  return ad::add(ad::matmul_nt(residual, ad::constant(layer.slice.w)), ad::constant(layer.slice.b));
}

namespace {

void check_inputs(std::size_t nf, std::size_t nl, const BatchAnnotation& ann) {
  if (nf != nl) throw ValidationError("sasft: pre-activation and layer counts differ");
  if (ann.included.size() != ann.rows()) throw ValidationError("sasft: annotation mask has the wrong size");
}

// Σ over layers of sum(relu(sign·(f − threshold)) ⊙ weight), where weight = 1/n on the
// qualifying rows and threshold is looked up per (feature, row language).
template <typename T, typename Qualifies, typename Threshold>
Var<T> masked_hinge(std::span<const Var<T>> f, std::span<const AuxLayer<T>> layers, const BatchAnnotation& ann,
                    Qualifies qualifies, Threshold threshold, bool below) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < ann.rows(); ++r) n += ann.included[r] && qualifies(ann.sample_langs[r / ann.seq]) ? 1 : 0;
  Var<T> total;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t k = layers[i].features.size();
    if (f[i]->value.rows() != ann.rows() || f[i]->value.cols() != k) {
      throw ValidationError("sasft: pre-activations " + f[i]->value.shape_str() + " do not match the batch");
    }
    ad::Tensor<T> th({ann.rows(), k}), weight({ann.rows(), k});
    for (std::size_t r = 0; r < ann.rows(); ++r) {
      const auto& j = ann.sample_langs[r / ann.seq];
      if (!ann.included[r] || !qualifies(j)) continue;
      for (std::size_t c = 0; c < k; ++c) {
        th.at(r, c) = static_cast<T>(threshold(layers[i], layers[i].features[c], j));
        weight.at(r, c) = T(1) / static_cast<T>(n);
      }
    }
    const auto gap = below ? ad::sub(f[i], ad::constant(std::move(th))) : ad::sub(ad::constant(std::move(th)), f[i]);
    const auto term = ad::sum(ad::mul(ad::relu(gap), ad::constant(std::move(weight))));
    total = total ? ad::add(total, term) : term;
  }
  return total ? total : ad::constant(ad::Tensor<T>::scalar(T(0)));
}

}  // namespace

template <typename T>
Var<T> loss_reduce(std::span<const Var<T>> f, std::span<const AuxLayer<T>> layers, const LanguageId& lang,
                   const BatchAnnotation& ann) {
  check_inputs(f.size(), layers.size(), ann);
  for (const auto& layer : layers) {
    for (std::size_t s : layer.features) {
      for (const auto& j : ann.sample_langs) {
        if (j == lang) continue;
        const auto it = layer.thresholds.alpha.find(s);
        if (it == layer.thresholds.alpha.end() || !it->second.contains(j)) {
          throw ValidationError("sasft: no alpha for feature " + std::to_string(s) + " and language " + j +
                                " at layer " + std::to_string(layer.layer_index));
        }
      }
    }
  }
  return masked_hinge<T>(
      f, layers, ann, [&](const LanguageId& j) { return j != lang; },
      [](const AuxLayer<T>& l, std::size_t s, const LanguageId& j) { return l.thresholds.alpha.at(s).at(j); }, true);
}

template <typename T>
Var<T> loss_enhance(std::span<const Var<T>> f, std::span<const AuxLayer<T>> layers, const LanguageId& lang,
                    const BatchAnnotation& ann) {
  check_inputs(f.size(), layers.size(), ann);
  for (const auto& layer : layers) {
    for (std::size_t s : layer.features) {
      if (!layer.thresholds.beta.contains(s)) {
        throw ValidationError("sasft: no beta for feature " + std::to_string(s) + " at layer " +
                              std::to_string(layer.layer_index));
      }
    }
  }
  return masked_hinge<T>(
      f, layers, ann, [&](const LanguageId& j) { return j == lang; },
      [](const AuxLayer<T>& l, std::size_t s, const LanguageId&) { return l.thresholds.beta.at(s); }, false);
}

template <typename T>
Var<T> total_loss(const Var<T>& ce, const Var<T>& aux, T aux_weight) {
  return ad::add(ce, ad::scale(aux, aux_weight));
}

template <typename T>
StepLosses<T> step_losses(const lm::LmVars<T>& vars, const lm::TrainBatch& batch, const BatchAnnotation& ann,
                          std::span<const AuxLayer<T>> layers, const SasftConfig& cfg) {
  if (cfg.mode == Mode::sft_only) {
    const auto ce = lm::lm_loss(vars, batch);
    return {ce, ad::constant(ad::Tensor<T>::scalar(T(0))), ce};
  }
  const auto out = lm::forward_graph(vars, batch.inputs);
  const auto ce = lm::lm_loss(out, batch);
  std::vector<AuxLayer<T>> used;
  for (std::size_t idx : cfg.layers) {
    const auto it = std::find_if(layers.begin(), layers.end(), [&](const auto& l) { return l.layer_index == idx; });
    if (it == layers.end()) throw ValidationError("sasft: no SAE features for layer " + std::to_string(idx));
    used.push_back(*it);
    if (cfg.mode == Mode::reduce_zero) {
      for (auto& [s, per_lang] : used.back().thresholds.alpha)
        for (auto& [j, a] : per_lang) a = 0.0;
    }
  }
  std::vector<Var<T>> f;
  for (const auto& l : used) {
    if (l.layer_index >= out.residuals.size()) throw ValidationError("sasft: layer index out of range");
    f.push_back(feature_preacts(out.residuals[l.layer_index], l));
  }
  const auto aux = cfg.mode == Mode::enhance ? loss_enhance<T>(f, used, cfg.target_language, ann)
                                             : loss_reduce<T>(f, used, cfg.target_language, ann);
  return {ce, aux, total_loss(ce, aux, static_cast<T>(cfg.aux_weight))};
}

std::vector<TrainSample> training_samples(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<TrainSample> out;
  for (const auto& doc : corpus.documents) {
    if (doc.role != DocRole::train) continue;
    TrainSample s{doc.lang, {Vocabulary::kBos}};
    const auto body = vocab.encode_utf8(doc.text);
    s.tokens.insert(s.tokens.end(), body.begin(), body.end());
    out.push_back(std::move(s));
  }
  return out;
}

TrainResult train(const lm::LmParams<float>& init, std::span<const TrainSample> samples,
                  std::span<const AuxLayer<float>> layers, const SasftConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw ValidationError("sasft: no training samples");
  for (const auto& s : samples) {
    if (s.tokens.size() != samples[0].tokens.size()) throw ValidationError("sasft: training samples differ in length");
  }
  if (cfg.mode != Mode::sft_only) {
    for (std::size_t idx : cfg.layers) {
      if (std::none_of(layers.begin(), layers.end(), [&](const auto& l) { return l.layer_index == idx; })) {
        throw ValidationError("sasft: no SAE features for layer " + std::to_string(idx));
      }
    }
  }

  TrainResult result{init, {}};
  auto& params = result.params;
  std::vector<ad::Tensor<float>*> ptrs;
  params.for_each([&](const std::string&, ad::Tensor<float>& t) { ptrs.push_back(&t); });
  ad::AdamState<float> state;
  const ad::AdamConfig adam{0.9, 0.999, 1e-8, cfg.weight_decay};
  Rng rng = derive_rng(cfg.seed, 0x5af7);
  std::vector<const std::vector<TokenId>*> picked(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double lr = ad::warmup_cosine_lr(static_cast<std::int64_t>(step), static_cast<std::int64_t>(cfg.steps),
                                           static_cast<std::int64_t>(cfg.warmup), cfg.lr);
    BatchAnnotation ann;
    for (auto& p : picked) {
      const auto& s = samples[std::min(samples.size() - 1,
                                       static_cast<std::size_t>(uniform01(rng) * static_cast<double>(samples.size())))];
      p = &s.tokens;
      ann.sample_langs.push_back(s.lang);
    }
    const auto batch = lm::make_train_batch(picked, cfg.response_start);
    ann.seq = batch.inputs.seq;
    ann.included.reserve(batch.targets.size());
    for (TokenId t : batch.targets) ann.included.push_back(t >= 0 ? 1 : 0);

    const auto vars = lm::bind(params, true);
    const auto losses = step_losses<float>(vars, batch, ann, layers, cfg);
    const double total = losses.total->value.item();
    if (!std::isfinite(total)) throw NumericError("sasft: non-finite loss at step " + std::to_string(step));
    ad::backward(losses.total);
    std::vector<const ad::Tensor<float>*> grads;
    for (const auto& leaf : vars.leaves) grads.push_back(&leaf->grad);
    ad::adam_step<float>(ptrs, grads, state, adam, lr);
    result.log.push_back({step, losses.ce->value.item(), losses.aux->value.item(), total, lr});
  }
  return result;
}

std::string log_csv(std::span<const LogRow> log) {
  std::string out = "step,ce,aux,total,lr\n";
  for (const auto& r : log) {
    out += std::to_string(r.step) + "," + format_double(r.ce) + "," + format_double(r.aux) + "," +
           format_double(r.total) + "," + format_double(r.lr) + "\n";
  }
  return out;
}

#define CSLAB_INSTANTIATE(T)                                                                                     \
  template AuxLayer<T> make_aux_layer(const sae::SaeParams<T>&, const langfeat::LanguageFeatureSet&);            \
  template Var<T> feature_preacts(const Var<T>&, const AuxLayer<T>&);                                            \
  template Var<T> loss_reduce(std::span<const Var<T>>, std::span<const AuxLayer<T>>, const LanguageId&,          \
                              const BatchAnnotation&);                                                           \
  template Var<T> loss_enhance(std::span<const Var<T>>, std::span<const AuxLayer<T>>, const LanguageId&,         \
                               const BatchAnnotation&);                                                          \
  template Var<T> total_loss(const Var<T>&, const Var<T>&, T);                                                   \
  template StepLosses<T> step_losses(const lm::LmVars<T>&, const lm::TrainBatch&, const BatchAnnotation&,        \
                                     std::span<const AuxLayer<T>>, const SasftConfig&);

CSLAB_INSTANTIATE(float)
CSLAB_INSTANTIATE(double)

}  // namespace cslab::sasft
