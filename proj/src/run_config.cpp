#include "cslab/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <yaml-cpp/yaml.h>

#include "cslab/scripts.hpp"

namespace cslab {
namespace {

// A mapping node whose keys must all be consumed before finish().
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ValidationError("config: " + path_ + " must be a mapping");
  }

  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key]; }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    seen_.insert(key);
    out = convert<T>(node_[key], where(key));
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!has(key)) throw ValidationError("config: missing " + where(key));
    get(key, out);
  }

  Section child(const std::string& key) {
    if (!has(key)) return Section(YAML::Node(), where(key));
    seen_.insert(key);
    return Section(node_[key], where(key));
  }

  YAML::Node raw(const std::string& key) {
    seen_.insert(key);
    return has(key) ? node_[key] : YAML::Node();
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ValidationError("config: unknown key " + where(key));
    }
  }

  template <typename T>
  static T convert(const YAML::Node& n, const std::string& where) {
    try {
      if constexpr (std::is_same_v<T, sasft::Mode>) {
        return sasft::parse_mode(n.as<std::string>());
      } else if constexpr (std::is_same_v<T, steer::PositionPolicy>) {
        return steer::parse_position_policy(n.as<std::string>());
      } else if constexpr (std::is_same_v<T, InjectionSite>) {
        return parse_injection_site(n.as<std::string>());
      } else if constexpr (std::is_same_v<T, char32_t>) {
        return static_cast<char32_t>(n.as<std::uint32_t>());
      } else {
        return n.as<T>();
      }
    } catch (const YAML::Exception&) {
      throw ValidationError("config: bad value for " + where);
    } catch (const ValidationError& e) {
      throw ValidationError("config: " + where + ": " + e.what());
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
bool contains(const std::vector<T>& v, const T& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

std::string hex(char32_t cp) {
  std::ostringstream s;
  s << "0x" << std::uppercase << std::hex << static_cast<std::uint32_t>(cp);
  return s.str();
}

}  // namespace

void RunConfig::validate() const {
  if (corpus.languages.empty()) throw ValidationError("config: corpus.languages is empty");
  std::vector<LanguageId> ids;
  std::size_t alphabet_total = 0;
  const auto registry = builtin_registry();
  for (const auto& l : corpus.languages) {
    if (contains(ids, l.id)) throw ValidationError("config: duplicate language " + l.id);
    if (!registry.has_language(l.id)) throw ValidationError("config: language " + l.id + " has no registered script");
    ids.push_back(l.id);
    alphabet_total += l.alphabet_size;
  }
  if (corpus.mixture.languages != ids) throw ValidationError("config: mixture languages differ from corpus.languages");
  corpus.mixture.validate();
  if (!contains(ids, corpus.prompt_lang)) throw ValidationError("config: prompt_lang not among languages");
  if (corpus.n_prompts == 0 || corpus.prompt_length == 0) throw ValidationError("config: empty prompt set");
  if (lm.vocab != 3 + alphabet_total) throw ValidationError("config: lm vocab does not match the alphabets");
  lm.validate();
  if (corpus.mixture.doc_length + 1 > lm.ctx_len) throw ValidationError("config: documents exceed ctx_len");
  if (corpus.prompt_length + 1 + eval.decode.max_new > lm.ctx_len) {
    throw ValidationError("config: prompt plus max_new exceeds ctx_len");
  }
  if (pretrain.steps == 0 || pretrain.batch == 0) throw ValidationError("config: pretrain steps and batch must be > 0");
  if (!(pretrain.lr > 0.0) || !(pretrain.weight_decay >= 0.0)) throw ValidationError("config: bad pretrain lr or decay");

  if (sae.layers.empty()) throw ValidationError("config: sae.layers is empty");
  for (std::size_t l : sae.layers) {
    if (l >= lm.n_layers) throw ValidationError("config: sae layer " + std::to_string(l) + " out of range");
  }
  sae.train.validate();
  if (!contains(ids, features.target_lang)) throw ValidationError("config: target_lang not among languages");
  if (!contains(ids, features.control_lang)) throw ValidationError("config: control_lang not among languages");
  if (features.target_lang == corpus.prompt_lang) throw ValidationError("config: target_lang equals prompt_lang");
  if (features.control_lang == features.target_lang) throw ValidationError("config: control_lang equals target_lang");
  if (features.k == 0) throw ValidationError("config: features.k must be > 0");
  if (ids.size() < 2) throw ValidationError("config: feature search needs at least two languages");

  sasft.validate();
  if (sasft.target_language != features.target_lang) throw ValidationError("config: sasft target differs");
  for (std::size_t l : sasft.layers) {
    if (!contains(sae.layers, l)) throw ValidationError("config: sasft layer " + std::to_string(l) + " has no SAE");
  }
  if (sasft.features_per_layer > features.k) throw ValidationError("config: features_per_layer exceeds features.k");
  if (compare.empty()) throw ValidationError("config: compare is empty");

  if (eval.profile_window == 0) throw ValidationError("config: profile_window must be >= 1");
  if (!contains(sae.layers, eval.profile_layer)) throw ValidationError("config: profile_layer has no SAE");
  if (!contains(sae.layers, ablation.layer)) throw ValidationError("config: ablation layer has no SAE");
  if (ablation.lambdas.size() < 2) throw ValidationError("config: ablation needs at least two lambdas");
  for (double l : ablation.lambdas) {
    if (!(l >= 0.0)) throw ValidationError("config: ablation lambdas must be >= 0");
  }
  if (!(ablation.lambda_unit > 0.0)) throw ValidationError("config: lambda_unit must be > 0");
  if (!std::isfinite(ablation.trigger_threshold)) throw ValidationError("config: trigger_threshold must be finite");
  if (eval.analysis_model != "base") {
    const auto mode = sasft::parse_mode(eval.analysis_model);
    if (!contains(compare, mode)) throw ValidationError("config: analysis_model is not trained by this run");
  }
}

RunConfig parse_run_config(std::string_view yaml) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("config: malformed YAML: ") + e.what());
  }
  RunConfig cfg;
  Section top(root, "");
  top.get("seed", cfg.seed);

  Section corpus = top.child("corpus");
  const YAML::Node langs = corpus.raw("languages");
  if (!langs || !langs.IsSequence()) throw ValidationError("config: corpus.languages must be a list");
  for (std::size_t i = 0; i < langs.size(); ++i) {
    Section ls(langs[i], "corpus.languages[" + std::to_string(i) + "]");
    LanguageSpec spec;
    ls.require("id", spec.id);
    ls.require("block", spec.block_base);
    ls.get("alphabet", spec.alphabet_size);
    ls.get("seed", spec.seed);
    ls.finish();
    cfg.corpus.languages.push_back(spec);
    cfg.corpus.mixture.languages.push_back(spec.id);
  }
  Section chain = corpus.child("chain");
  chain.get("letter_concentration", cfg.corpus.chain.letter_concentration);
  chain.get("space_after_letter", cfg.corpus.chain.space_after_letter);
  chain.get("word_start_concentration", cfg.corpus.chain.word_start_concentration);
  chain.get("period_after_space", cfg.corpus.chain.period_after_space);
  chain.finish();
  Section mix = corpus.child("mixture");
  auto& m = cfg.corpus.mixture;
  mix.require("docs_per_language", m.docs_per_language);
  mix.require("doc_length", m.doc_length);
  mix.get("injection_rate", m.injection_rate);
  mix.get("injection_lang", m.injection_lang);
  mix.get("injection_span", m.injection_span);
  mix.get("injection_site", m.injection_site);
  mix.get("injection_hosts", m.injection_hosts);
  mix.finish();
  corpus.require("prompt_lang", cfg.corpus.prompt_lang);
  corpus.get("n_prompts", cfg.corpus.n_prompts);
  corpus.get("prompt_length", cfg.corpus.prompt_length);
  corpus.get("heldout_per_language", cfg.corpus.heldout_per_language);
  corpus.finish();

  std::size_t alphabet_total = 0;
  for (const auto& l : cfg.corpus.languages) alphabet_total += l.alphabet_size;
  cfg.lm.vocab = 3 + alphabet_total;
  Section lm = top.child("lm");
  lm.get("d_model", cfg.lm.d_model);
  lm.get("n_layers", cfg.lm.n_layers);
  lm.get("n_heads", cfg.lm.n_heads);
  lm.get("d_ff", cfg.lm.d_ff);
  lm.get("ctx_len", cfg.lm.ctx_len);
  lm.get("residual_scale", cfg.lm.residual_scale);
  lm.finish();

  Section pre = top.child("pretrain");
  pre.get("steps", cfg.pretrain.steps);
  pre.get("batch", cfg.pretrain.batch);
  pre.get("warmup", cfg.pretrain.warmup);
  pre.get("lr", cfg.pretrain.lr);
  pre.get("weight_decay", cfg.pretrain.weight_decay);
  pre.finish();

  Section sae = top.child("sae");
  sae.get("layers", cfg.sae.layers);
  sae.get("token_budget", cfg.sae.token_budget);
  sae.get("sparsity_weight", cfg.sae.train.sparsity_weight);
  sae.get("lr", cfg.sae.train.lr);
  sae.get("steps", cfg.sae.train.steps);
  sae.get("batch", cfg.sae.train.batch);
  sae.get("expansion", cfg.sae.train.expansion);
  sae.finish();

  Section feat = top.child("features");
  feat.require("target_lang", cfg.features.target_lang);
  feat.require("control_lang", cfg.features.control_lang);
  feat.get("k", cfg.features.k);
  feat.finish();

  Section s = top.child("sasft");
  auto& sc = cfg.sasft;
  s.get("mode", sc.mode);
  s.get("layers", sc.layers);
  s.get("features_per_layer", sc.features_per_layer);
  s.get("aux_weight", sc.aux_weight);
  s.get("lr", sc.lr);
  s.get("weight_decay", sc.weight_decay);
  s.get("warmup", sc.warmup);
  s.get("batch", sc.batch);
  s.get("steps", sc.steps);
  s.get("response_start", sc.response_start);
  s.finish();
  sc.target_language = cfg.features.target_lang;

  if (top.has("compare")) {
    const YAML::Node modes = top.raw("compare");
    if (!modes.IsSequence()) throw ValidationError("config: compare must be a list");
    cfg.compare.clear();
    for (const auto& n : modes) cfg.compare.push_back(Section::convert<sasft::Mode>(n, "compare"));
  }

  Section ev = top.child("eval");
  ev.get("top_p", cfg.eval.decode.top_p);
  ev.get("temperature", cfg.eval.decode.temperature);
  ev.get("repetition_penalty", cfg.eval.decode.repetition_penalty);
  ev.get("max_new", cfg.eval.decode.max_new);
  ev.get("profile_window", cfg.eval.profile_window);
  ev.get("profile_layer", cfg.eval.profile_layer);
  ev.get("analysis_model", cfg.eval.analysis_model);
  ev.finish();

  Section ab = top.child("ablation");
  ab.get("layer", cfg.ablation.layer);
  ab.get("lambdas", cfg.ablation.lambdas);
  ab.get("lambda_unit", cfg.ablation.lambda_unit);
  ab.get("policy", cfg.ablation.policy);
  ab.get("trigger_threshold", cfg.ablation.trigger_threshold);
  ab.finish();

  top.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingInputError("config not found: " + path.string());
  return parse_run_config(read_file(path));
}

std::string run_config_to_yaml(const RunConfig& cfg) {
  YAML::Emitter out;
  auto num = [](double v) { return format_double(v); };
  auto flow = [&](const auto& seq) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& x : seq) out << x;
    out << YAML::EndSeq;
  };
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;

  out << YAML::Key << "corpus" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "languages" << YAML::Value << YAML::BeginSeq;
  for (const auto& l : cfg.corpus.languages) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "id" << YAML::Value << l.id << YAML::Key << "block"
        << YAML::Value << hex(l.block_base) << YAML::Key << "alphabet" << YAML::Value << l.alphabet_size << YAML::Key
        << "seed" << YAML::Value << l.seed << YAML::EndMap;
  }
  out << YAML::EndSeq;
  const auto& ch = cfg.corpus.chain;
  out << YAML::Key << "chain" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "letter_concentration" << YAML::Value << num(ch.letter_concentration);
  out << YAML::Key << "space_after_letter" << YAML::Value << num(ch.space_after_letter);
  out << YAML::Key << "word_start_concentration" << YAML::Value << num(ch.word_start_concentration);
  out << YAML::Key << "period_after_space" << YAML::Value << num(ch.period_after_space);
  out << YAML::EndMap;
  const auto& m = cfg.corpus.mixture;
  out << YAML::Key << "mixture" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "docs_per_language" << YAML::Value << m.docs_per_language;
  out << YAML::Key << "doc_length" << YAML::Value << m.doc_length;
  out << YAML::Key << "injection_rate" << YAML::Value << num(m.injection_rate);
  out << YAML::Key << "injection_lang" << YAML::Value << m.injection_lang;
  out << YAML::Key << "injection_span" << YAML::Value << m.injection_span;
  out << YAML::Key << "injection_site" << YAML::Value << std::string(to_string(m.injection_site));
  out << YAML::Key << "injection_hosts" << YAML::Value;
  flow(m.injection_hosts);
  out << YAML::EndMap;
  out << YAML::Key << "prompt_lang" << YAML::Value << cfg.corpus.prompt_lang;
  out << YAML::Key << "n_prompts" << YAML::Value << cfg.corpus.n_prompts;
  out << YAML::Key << "prompt_length" << YAML::Value << cfg.corpus.prompt_length;
  out << YAML::Key << "heldout_per_language" << YAML::Value << cfg.corpus.heldout_per_language;
  out << YAML::EndMap;

  out << YAML::Key << "lm" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "d_model" << YAML::Value << cfg.lm.d_model;
  out << YAML::Key << "n_layers" << YAML::Value << cfg.lm.n_layers;
  out << YAML::Key << "n_heads" << YAML::Value << cfg.lm.n_heads;
  out << YAML::Key << "d_ff" << YAML::Value << cfg.lm.d_ff;
  out << YAML::Key << "ctx_len" << YAML::Value << cfg.lm.ctx_len;
  out << YAML::Key << "residual_scale" << YAML::Value << num(cfg.lm.residual_scale);
  out << YAML::EndMap;

  const auto& p = cfg.pretrain;
  out << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "steps" << YAML::Value << p.steps;
  out << YAML::Key << "batch" << YAML::Value << p.batch;
  out << YAML::Key << "warmup" << YAML::Value << p.warmup;
  out << YAML::Key << "lr" << YAML::Value << num(p.lr);
  out << YAML::Key << "weight_decay" << YAML::Value << num(p.weight_decay);
  out << YAML::EndMap;

  const auto& st = cfg.sae.train;
  out << YAML::Key << "sae" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "layers" << YAML::Value;
  flow(cfg.sae.layers);
  out << YAML::Key << "token_budget" << YAML::Value << cfg.sae.token_budget;
  out << YAML::Key << "sparsity_weight" << YAML::Value << num(st.sparsity_weight);
  out << YAML::Key << "lr" << YAML::Value << num(st.lr);
  out << YAML::Key << "steps" << YAML::Value << st.steps;
  out << YAML::Key << "batch" << YAML::Value << st.batch;
  out << YAML::Key << "expansion" << YAML::Value << st.expansion;
  out << YAML::EndMap;

  out << YAML::Key << "features" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "target_lang" << YAML::Value << cfg.features.target_lang;
  out << YAML::Key << "control_lang" << YAML::Value << cfg.features.control_lang;
  out << YAML::Key << "k" << YAML::Value << cfg.features.k;
  out << YAML::EndMap;

  const auto& s = cfg.sasft;
  out << YAML::Key << "sasft" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << std::string(sasft::to_string(s.mode));
  out << YAML::Key << "layers" << YAML::Value;
  flow(s.layers);
  out << YAML::Key << "features_per_layer" << YAML::Value << s.features_per_layer;
  out << YAML::Key << "aux_weight" << YAML::Value << num(s.aux_weight);
  out << YAML::Key << "lr" << YAML::Value << num(s.lr);
  out << YAML::Key << "weight_decay" << YAML::Value << num(s.weight_decay);
  out << YAML::Key << "warmup" << YAML::Value << s.warmup;
  out << YAML::Key << "batch" << YAML::Value << s.batch;
  out << YAML::Key << "steps" << YAML::Value << s.steps;
  out << YAML::Key << "response_start" << YAML::Value << s.response_start;
  out << YAML::EndMap;

  std::vector<std::string> modes;
  for (auto mode : cfg.compare) modes.emplace_back(sasft::to_string(mode));
  out << YAML::Key << "compare" << YAML::Value;
  flow(modes);

  const auto& d = cfg.eval.decode;
  out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "top_p" << YAML::Value << num(d.top_p);
  out << YAML::Key << "temperature" << YAML::Value << num(d.temperature);
  out << YAML::Key << "repetition_penalty" << YAML::Value << num(d.repetition_penalty);
  out << YAML::Key << "max_new" << YAML::Value << d.max_new;
  out << YAML::Key << "profile_window" << YAML::Value << cfg.eval.profile_window;
  out << YAML::Key << "profile_layer" << YAML::Value << cfg.eval.profile_layer;
  out << YAML::Key << "analysis_model" << YAML::Value << cfg.eval.analysis_model;
  out << YAML::EndMap;

  std::vector<std::string> lambdas;
  for (double l : cfg.ablation.lambdas) lambdas.push_back(num(l));
  out << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "layer" << YAML::Value << cfg.ablation.layer;
  out << YAML::Key << "lambdas" << YAML::Value;
  flow(lambdas);
  out << YAML::Key << "lambda_unit" << YAML::Value << num(cfg.ablation.lambda_unit);
  out << YAML::Key << "policy" << YAML::Value << std::string(steer::to_string(cfg.ablation.policy));
  out << YAML::Key << "trigger_threshold" << YAML::Value << num(cfg.ablation.trigger_threshold);
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(run_config_to_yaml(cfg)); }

}  // namespace cslab
