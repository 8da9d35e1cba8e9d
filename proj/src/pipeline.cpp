#include "cslab/pipeline.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "cslab/report.hpp"
#include "cslab/sae.hpp"
#include "cslab/sasft.hpp"
#include "cslab/scripts.hpp"
#include "cslab/steer.hpp"

namespace cslab::pipeline {

using nlohmann::json;

Manifest begin(std::string command) {
  Manifest m;
  m.command = std::move(command);
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  const json j = {{"command", m.command},
                  {"config_hash", m.config_hash},
                  {"seed", m.seed},
                  {"inputs", m.inputs},
                  {"outputs", m.outputs}};
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    return {j.at("command").get<std::string>(), j.at("config_hash").get<std::string>(),
            j.at("seed").get<std::uint64_t>(), j.at("inputs").get<std::map<std::string, std::string>>(),
            j.at("outputs").get<std::map<std::string, std::string>>()};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
}

std::uint64_t stage_seed(std::uint64_t master, Stage stage) {
  return mix_seed(master, static_cast<std::uint64_t>(stage));
}

Run::Run(RunConfig cfg, fs::path dir, Logger log) : cfg_(std::move(cfg)), dir_(std::move(dir)), log_(std::move(log)) {
  cfg_.validate();
}

void Run::log(const std::string& msg) const {
  if (log_) log_(msg);
}

std::vector<Manifest> Run::manifests() const {
  std::vector<Manifest> out;
  const auto dir = dir_ / "manifests";
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back(manifest_from_json(read_file(f)));
  return out;
}

std::string Run::check_input(std::string_view name) const {
  const auto p = path(name);
  if (!fs::exists(p)) throw MissingInputError("missing input: " + p.string());
  const auto digest = sha256_file(p);
  for (const auto& m : manifests()) {
    auto it = m.outputs.find(std::string(name));
    if (it != m.outputs.end() && it->second != digest) {
      throw ValidationError("digest mismatch: " + p.string() + " differs from the output of " + m.command);
    }
  }
  return digest;
}

void Run::write_manifest(const std::string& name, Manifest m) const {
  m.config_hash = config_hash(cfg_);
  m.seed = cfg_.seed;
  fs::create_directories(dir_ / "manifests");
  write_file(dir_ / "manifests" / (name + ".json"), manifest_to_json(m));
}

std::string model_checkpoint(std::string_view model) {
  if (model == "base") return "lm.ckpt";
  return "sasft_" + std::string(sasft::to_string(sasft::parse_mode(model))) + ".ckpt";
}

std::string features_file(const LanguageId& lang, std::size_t layer) {
  return "features_" + lang + "_L" + std::to_string(layer) + ".json";
}

std::string sae_file(std::size_t layer) { return "sae_L" + std::to_string(layer) + ".ckpt"; }

namespace {

void output(const Run& run, Manifest& m, const std::string& name, std::string_view bytes) {
  fs::create_directories(run.dir());
  write_file(run.path(name), bytes);
  m.outputs[name] = sha256_hex(bytes);
}

void output_file(const Run& run, Manifest& m, const std::string& name) {
  m.outputs[name] = sha256_file(run.path(name));
}

void input(const Run& run, Manifest& m, const std::string& name) { m.inputs[name] = run.check_input(name); }

lm::LmParams<float> load_model(const Run& run, Manifest& m, const std::string& model) {
  const auto name = model_checkpoint(model);
  input(run, m, name);
  input(run, m, name + ".json");
  return lm::load_lm(run.path(name));
}

sae::SaeParams<float> load_sae(const Run& run, Manifest& m, std::size_t layer) {
  const auto name = sae_file(layer);
  input(run, m, name);
  input(run, m, name + ".json");
  return sae::load_sae(run.path(name));
}

langfeat::LanguageFeatureSet load_features(const Run& run, Manifest& m, const LanguageId& lang, std::size_t layer) {
  const auto name = features_file(lang, layer);
  input(run, m, name);
  return langfeat::feature_set_from_json(read_file(run.path(name)));
}

std::vector<LanguageId> language_ids(const RunConfig& cfg) { return cfg.corpus.mixture.languages; }

// Languages whose feature sets later stages read.
std::vector<LanguageId> feature_languages(const RunConfig& cfg) {
  std::vector<LanguageId> out{cfg.features.target_lang, cfg.features.control_lang};
  if (std::find(cfg.compare.begin(), cfg.compare.end(), sasft::Mode::enhance) != cfg.compare.end() &&
      std::find(out.begin(), out.end(), cfg.corpus.prompt_lang) == out.end()) {
    out.push_back(cfg.corpus.prompt_lang);
  }
  return out;
}

std::vector<eval::Prompt> prompts(const LoadedCorpus& c) { return eval::prompts_from_corpus(c.corpus, c.vocab); }

}  // namespace

LoadedCorpus load_corpus(const Run& run, Manifest& m) {
  input(run, m, "corpus.jsonl");
  input(run, m, "corpus_manifest.json");
  input(run, m, "vocab.csv");
  LoadedCorpus out;
  out.corpus.documents = corpus_from_jsonl(read_file(run.path("corpus.jsonl")));
  out.corpus.manifest = cslab::manifest_from_json(read_file(run.path("corpus_manifest.json")));
  out.vocab = Vocabulary::from_csv(read_file(run.path("vocab.csv")));
  return out;
}

Manifest gen_corpus(const Run& run) {
  const auto& cfg = run.config();
  auto m = begin("gen-corpus");
  const auto registry = builtin_registry();
  std::map<LanguageId, SyntheticLanguage> langs;
  std::vector<SyntheticLanguage> ordered;
  for (const auto& spec : cfg.corpus.languages) {
    auto lang = make_language(spec.id, spec.block_base, spec.alphabet_size, mix_seed(cfg.seed, spec.seed), registry,
                              cfg.corpus.chain);
    ordered.push_back(lang);
    langs.emplace(spec.id, std::move(lang));
  }
  Rng rng = derive_rng(cfg.seed, static_cast<std::uint64_t>(Stage::corpus));
  Corpus corpus = build_corpus(cfg.corpus.mixture, langs, rng);
  const auto& prompt_lang = langs.at(cfg.corpus.prompt_lang);
  for (std::size_t i = 0; i < cfg.corpus.n_prompts; ++i) {
    corpus.documents.push_back(sample_document(prompt_lang, cfg.corpus.prompt_length, rng, DocRole::prompt));
  }
  for (const auto& lang : ordered) {
    for (std::size_t i = 0; i < cfg.corpus.heldout_per_language; ++i) {
      corpus.documents.push_back(sample_document(lang, cfg.corpus.mixture.doc_length, rng, DocRole::heldout));
    }
  }
  output(run, m, "corpus.jsonl", corpus_to_jsonl(corpus.documents));
  output(run, m, "corpus_manifest.json", manifest_to_json(corpus.manifest));
  output(run, m, "vocab.csv", Vocabulary::from_languages(ordered).to_csv());
  run.log("gen-corpus: " + std::to_string(corpus.documents.size()) + " documents, " +
          std::to_string(corpus.manifest.injected.size()) + " injected");
  run.write_manifest("gen-corpus", m);
  return m;
}

Manifest train_lm(const Run& run) {
  const auto& cfg = run.config();
  auto m = begin("train-lm");
  const auto data = load_corpus(run, m);
  if (data.vocab.size() != cfg.lm.vocab) throw ValidationError("train-lm: vocabulary size differs from the config");
  Rng rng = derive_rng(cfg.seed, static_cast<std::uint64_t>(Stage::lm_init));
  const auto init = lm::init_lm(cfg.lm, rng);
  // Pretraining is the same AdamW loop with no auxiliary term and loss on every position.
  sasft::SasftConfig pre;
  pre.mode = sasft::Mode::sft_only;
  pre.lr = cfg.pretrain.lr;
  pre.weight_decay = cfg.pretrain.weight_decay;
  pre.warmup = cfg.pretrain.warmup;
  pre.batch = cfg.pretrain.batch;
  pre.steps = cfg.pretrain.steps;
  pre.response_start = 0;
  pre.seed = stage_seed(cfg.seed, Stage::pretrain);
  const auto samples = sasft::training_samples(data.corpus, data.vocab);
  run.log("train-lm: " + std::to_string(pre.steps) + " steps on " + std::to_string(samples.size()) + " documents");
  const auto result = sasft::train(init, samples, {}, pre);
  lm::save_lm(run.path("lm.ckpt"), result.params);
  output_file(run, m, "lm.ckpt");
  output_file(run, m, "lm.ckpt.json");
  output(run, m, "pretrain_log.csv", sasft::log_csv(result.log));
  run.log("train-lm: final ce " + format_double(result.log.back().ce));
  run.write_manifest("train-lm", m);
  return m;
}

Manifest train_sae(const Run& run) {
  const auto& cfg = run.config();
  auto m = begin("train-sae");
  const auto data = load_corpus(run, m);
  const auto lm = load_model(run, m, "base");
  const auto langs = language_ids(cfg);
  for (std::size_t layer : cfg.sae.layers) {
    const auto residuals = langfeat::collect_residuals(lm, data.vocab, data.corpus, layer, langs, cfg.sae.token_budget);
    std::size_t rows = 0;
    for (const auto& [lang, t] : residuals.by_language) rows += t.rows();
    ad::Tensor<float> all({rows, residuals.width()});
    std::size_t r = 0;
    for (const auto& lang : langs) {
      const auto& t = residuals.by_language.at(lang);
      std::copy(t.values().begin(), t.values().end(), all.values().begin() + static_cast<std::ptrdiff_t>(r * t.cols()));
      r += t.rows();
    }
    Rng rng = derive_rng(stage_seed(cfg.seed, Stage::sae), layer);
    const auto result = sae::train_sae(all, layer, cfg.sae.train, rng);
    const auto name = sae_file(layer);
    sae::save_sae(run.path(name), result.params);
    output_file(run, m, name);
    output_file(run, m, name + ".json");
    const json stats = {{"layer_index", layer},
                        {"rows", rows},
                        {"input_scale", result.input_scale},
                        {"initial_mse", result.initial_mse},
                        {"final_mse", result.final_mse},
                        {"mean_l0", sae::mean_l0(result.params, all)}};
    output(run, m, "sae_L" + std::to_string(layer) + "_stats.json", stats.dump(2) + "\n");
    run.log("train-sae: layer " + std::to_string(layer) + " mse " + format_double(result.initial_mse) + " -> " +
            format_double(result.final_mse));
  }
  run.write_manifest("train-sae", m);
  return m;
}

Manifest find_features(const Run& run) {
  const auto& cfg = run.config();
  auto m = begin("find-features");
  const auto data = load_corpus(run, m);
  const auto lm = load_model(run, m, "base");
  const auto langs = language_ids(cfg);
  for (std::size_t layer : cfg.sae.layers) {
    const auto sae = load_sae(run, m, layer);
    const auto residuals = langfeat::collect_residuals(lm, data.vocab, data.corpus, layer, langs, cfg.sae.token_budget);
    for (const auto& lang : feature_languages(cfg)) {
      const auto set = langfeat::find_features(sae, residuals, lang, cfg.features.k);
      output(run, m, features_file(lang, layer), langfeat::feature_set_to_json(set));
      std::string top;
      for (std::size_t i = 0; i < set.features.size(); ++i) {
        top += " " + std::to_string(set.features[i]) + " (nu " + format_double(set.nu[i]) + ")";
      }
      run.log("find-features: " + lang + " layer " + std::to_string(layer) + ":" + top);
    }
  }
  run.write_manifest("find-features", m);
  return m;
}

Manifest run_sasft(const Run& run, sasft::Mode mode) {
  const auto& cfg = run.config();
  const std::string mode_name(sasft::to_string(mode));
  auto m = begin("sasft");
  const auto data = load_corpus(run, m);
  const auto init = load_model(run, m, "base");
  sasft::SasftConfig sc = cfg.sasft;
  sc.mode = mode;
  sc.seed = stage_seed(cfg.seed, Stage::finetune);
  // Enhancement rewards the features of the language the responses should stay in.
  if (mode == sasft::Mode::enhance) sc.target_language = cfg.corpus.prompt_lang;
  std::vector<sasft::AuxLayer<float>> layers;
  if (mode != sasft::Mode::sft_only) {
    for (std::size_t layer : sc.layers) {
      auto set = load_features(run, m, sc.target_language, layer);
      set.features.resize(std::min(set.features.size(), sc.features_per_layer));
      set.nu.resize(set.features.size());
      layers.push_back(sasft::make_aux_layer(load_sae(run, m, layer), set));
    }
  }
  const auto samples = sasft::training_samples(data.corpus, data.vocab);
  run.log("sasft: mode " + mode_name + ", " + std::to_string(sc.steps) + " steps");
  const auto result = sasft::train(init, samples, layers, sc);
  const auto name = model_checkpoint(mode_name);
  lm::save_lm(run.path(name), result.params);
  output_file(run, m, name);
  output_file(run, m, name + ".json");
  output(run, m, "sasft_" + mode_name + "_log.csv", sasft::log_csv(result.log));
  const auto& last = result.log.back();
  run.log("sasft: " + mode_name + " final ce " + format_double(last.ce) + " aux " + format_double(last.aux));
  run.write_manifest("sasft_" + mode_name, m);
  return m;
}

Manifest eval_cs(const Run& run, const std::string& model) {
  const auto& cfg = run.config();
  auto m = begin("eval-cs");
  const auto data = load_corpus(run, m);
  const auto lm = load_model(run, m, model);
  const auto ps = prompts(data);
  const auto result = eval::cs_ratio(lm, ps, data.vocab, builtin_registry(), cfg.features.target_lang,
                                     cfg.eval.decode, stage_seed(cfg.seed, Stage::eval));
  output(run, m, "cs_" + model + ".csv", eval::cs_report_csv(result.report, ps));
  const json summary = {{"model", model},
                        {"lang", result.report.lang},
                        {"n_prompts", result.report.n_prompts},
                        {"n_switched", result.report.n_switched},
                        {"ratio", result.report.ratio}};
  output(run, m, "cs_" + model + ".json", summary.dump(2) + "\n");
  std::string lines;
  for (std::size_t i = 0; i < result.responses.size(); ++i) {
    const json row = {{"prompt_id", i}, {"response", utf8::encode(data.vocab.decode(result.responses[i]))}};
    lines += row.dump() + "\n";
  }
  output(run, m, "responses_" + model + ".jsonl", lines);
  run.log("eval-cs: " + model + " " + std::to_string(result.report.n_switched) + "/" +
          std::to_string(result.report.n_prompts) + " switched to " + result.report.lang);
  run.write_manifest("eval-cs_" + model, m);
  return m;
}

Manifest eval_ppl(const Run& run, const std::string& model) {
  auto m = begin("eval-ppl");
  const auto data = load_corpus(run, m);
  const auto lm = load_model(run, m, model);
  std::vector<Document> heldout;
  for (const auto& d : data.corpus.documents) {
    if (d.role == DocRole::heldout) heldout.push_back(d);
  }
  if (heldout.empty()) throw ValidationError("eval-ppl: corpus has no heldout documents");
  const auto ppl = eval::perplexity_per_language(lm, data.vocab, heldout);
  json j = {{"model", model}, {"ppl", json::object()}};
  std::string msg = "eval-ppl: " + model;
  for (const auto& [lang, v] : ppl) {
    j["ppl"][lang] = v;
    msg += " " + lang + " " + format_double(v);
  }
  output(run, m, "ppl_" + model + ".json", j.dump(2) + "\n");
  run.log(msg);
  run.write_manifest("eval-ppl_" + model, m);
  return m;
}

Manifest ablate_sweep(const Run& run, const std::string& model) {
  const auto& cfg = run.config();
  auto m = begin("ablate-sweep");
  const auto data = load_corpus(run, m);
  const auto lm = load_model(run, m, model);
  const std::size_t layer = cfg.ablation.layer;
  const auto sae = load_sae(run, m, layer);
  const auto target = load_features(run, m, cfg.features.target_lang, layer);
  const auto control = load_features(run, m, cfg.features.control_lang, layer);
  const std::vector<steer::SweepFeature> feats{{"target", target.features.at(0)}, {"control", control.features.at(0)}};
  std::vector<double> lambdas;
  for (double l : cfg.ablation.lambdas) lambdas.push_back(l * cfg.ablation.lambda_unit);
  const auto ps = prompts(data);
  const auto rows = steer::ablation_sweep(lm, sae, feats, lambdas, ps, data.vocab, builtin_registry(),
                                          cfg.features.target_lang, cfg.eval.decode, stage_seed(cfg.seed, Stage::eval),
                                          cfg.ablation.policy, cfg.ablation.trigger_threshold);
  output(run, m, "sweep.csv", steer::sweep_csv(rows));
  for (const auto& r : rows) {
    run.log("ablate-sweep: " + r.feature_role + " lambda " + format_double(r.lambda) + " cs " +
            format_double(r.cs_ratio));
  }
  run.write_manifest("ablate-sweep", m);
  return m;
}

Manifest profile_preact(const Run& run, const std::string& model) {
  const auto& cfg = run.config();
  auto m = begin("profile-preact");
  const auto data = load_corpus(run, m);
  const auto lm = load_model(run, m, model);
  const std::size_t layer = cfg.eval.profile_layer;
  const auto sae = load_sae(run, m, layer);
  const auto target = load_features(run, m, cfg.features.target_lang, layer);
  const auto ps = prompts(data);
  const auto registry = builtin_registry();
  const auto gen = eval::cs_ratio(lm, ps, data.vocab, registry, cfg.features.target_lang, cfg.eval.decode,
                                  stage_seed(cfg.seed, Stage::eval));
  const auto profile = eval::preact_profile(lm, sae, target.features.at(0), ps, gen.responses, data.vocab, registry,
                                            cfg.features.target_lang, cfg.eval.profile_window);
  output(run, m, "profile.csv", eval::profile_csv(profile));
  std::string msg = "profile-preact: feature " + std::to_string(target.features.at(0));
  for (std::size_t i = 0; i < profile.offsets.size(); ++i) {
    msg += " " + std::to_string(profile.offsets[i]) + ":" + format_double(profile.mean_preact[i]);
  }
  run.log(msg);
  run.write_manifest("profile-preact", m);
  return m;
}

Manifest ztest_models(const Run& run, const std::string& first, const std::string& second) {
  auto m = begin("ztest");
  auto counts = [&](const std::string& model) {
    const auto name = "cs_" + model + ".json";
    input(run, m, name);
    const json j = json::parse(read_file(run.path(name)));
    return std::pair{j.at("n_switched").get<std::size_t>(), j.at("n_prompts").get<std::size_t>()};
  };
  const auto [x1, n1] = counts(first);
  const auto [x2, n2] = counts(second);
  const auto r = eval::ztest(x1, n1, x2, n2);
  const auto name = "ztest_" + first + "_vs_" + second;
  output(run, m, name + ".json", eval::ztest_json(r));
  run.log("ztest: " + first + " vs " + second + " z " + format_double(r.z) + " p " + format_double(r.p));
  run.write_manifest(name, m);
  return m;
}

void run_all(const Run& run) {
  const auto& cfg = run.config();
  gen_corpus(run);
  train_lm(run);
  train_sae(run);
  find_features(run);
  eval_cs(run, "base");
  eval_ppl(run, "base");
  for (auto mode : cfg.compare) {
    const std::string name(sasft::to_string(mode));
    run_sasft(run, mode);
    eval_cs(run, name);
    eval_ppl(run, name);
  }
  profile_preact(run, cfg.eval.analysis_model);
  ablate_sweep(run, cfg.eval.analysis_model);
  const bool has_sft = std::find(cfg.compare.begin(), cfg.compare.end(), sasft::Mode::sft_only) != cfg.compare.end();
  if (has_sft) {
    for (auto mode : cfg.compare) {
      if (mode != sasft::Mode::sft_only) ztest_models(run, "sft_only", std::string(sasft::to_string(mode)));
    }
  }
  report::write_report(run);
}

}  // namespace cslab::pipeline
