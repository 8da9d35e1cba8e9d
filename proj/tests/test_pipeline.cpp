#include <doctest.h>

#include <nlohmann/json.hpp>
#include <regex>

#include "cslab/pipeline.hpp"
#include "cslab/report.hpp"
#include "mini_config.hpp"

using namespace cslab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cslab_test_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

std::map<std::string, std::string> all_outputs(const pipeline::Run& run) {
  std::map<std::string, std::string> out;
  for (const auto& m : run.manifests()) out.insert(m.outputs.begin(), m.outputs.end());
  return out;
}

}  // namespace

TEST_CASE("run config parses, round-trips and fills derived fields") {
  const auto cfg = parse_run_config(kMiniConfig);
  CHECK(cfg.seed == 3);
  CHECK(cfg.lm.vocab == 15);
  CHECK(cfg.corpus.mixture.languages == std::vector<LanguageId>{"synA", "synB"});
  CHECK(cfg.corpus.languages[1].block_base == 0xE100);
  CHECK(cfg.sasft.target_language == "synB");
  CHECK(cfg.sasft.aux_weight == 0.05);
  CHECK(cfg.compare.size() == 3);
  const auto yaml = run_config_to_yaml(cfg);
  CHECK(run_config_to_yaml(parse_run_config(yaml)) == yaml);
  CHECK(config_hash(parse_run_config(yaml)) == config_hash(cfg));
  auto reseeded = cfg;
  reseeded.seed = 4;
  CHECK(config_hash(reseeded) != config_hash(cfg));

  const auto shipped = load_run_config(fs::path(CSLAB_SOURCE_DIR) / "configs" / "bilingual_toy.yaml");
  CHECK(shipped.corpus.mixture.injection_rate == 0.05);
  CHECK(shipped.corpus.n_prompts == 1000);
  CHECK(shipped.lm.vocab == 63);
  CHECK(shipped.ablation.policy == steer::PositionPolicy::trigger_on_preact);
  CHECK(shipped.ablation.trigger_threshold == 0.0);
  CHECK(cfg.ablation.policy == steer::PositionPolicy::all_generated);
}

TEST_CASE("run config rejects unknown keys, bad types and inconsistencies") {
  const std::string base = kMiniConfig;
  auto rejects = [](const std::string& yaml, const std::string& fragment) {
    try {
      parse_run_config(yaml);
      FAIL("accepted: " << fragment);
    } catch (const ValidationError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  rejects(replace(base, "steps: 8, warmup", "stpes: 8, warmup"), "unknown key sasft.stpes");
  rejects(replace(base, "seed: 3\n", "seed: 3\nlearning_rate: 1\n"), "unknown key learning_rate");
  rejects(replace(base, "k: 2}", "k: 2, extra: 1}"), "unknown key features.extra");
  rejects(replace(base, "doc_length: 20", "doc_length: long"), "corpus.mixture.doc_length");
  rejects(replace(base, "{mode: reduce", "{mode: boost"), "sasft.mode");
  rejects(replace(base, "target_lang: synB", "target_lang: synA"), "target_lang equals prompt_lang");
  rejects(replace(base, "layers: [0, 1], batch", "layers: [0, 3], batch"), "has no SAE");
  rejects(replace(base, "{id: synB, block: 0xE100", "{id: synQ, block: 0xE100"), "synQ");
  rejects(replace(base, "  prompt_lang: synA\n", ""), "missing corpus.prompt_lang");
  rejects("corpus: [1, 2", "malformed");
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.yaml"), MissingInputError);
}

TEST_CASE("manifest JSON round trip") {
  pipeline::Manifest m{"eval-cs", "abc", 7, {{"lm.ckpt", "11"}}, {{"cs_base.csv", "22"}}};
  const auto back = pipeline::manifest_from_json(pipeline::manifest_to_json(m));
  CHECK(back.command == "eval-cs");
  CHECK(back.seed == 7);
  CHECK(back.inputs == m.inputs);
  CHECK(back.outputs == m.outputs);
  CHECK_THROWS_AS(pipeline::manifest_from_json("{}"), ValidationError);
}

TEST_CASE("the full pipeline runs end to end, is reproducible and leaves a provenance chain") {
  const auto cfg = parse_run_config(kMiniConfig);
  const pipeline::Run run(cfg, scratch_dir("a"));
  pipeline::run_all(run);
  for (const char* f : {"lm.ckpt", "sasft_sft_only.ckpt", "sasft_reduce.ckpt", "sasft_reduce_zero.ckpt", "sweep.csv",
                        "profile.csv", "table1.csv", "summary.csv", "sweep.svg", "profile.svg"}) {
    CHECK_MESSAGE(fs::exists(run.path(f)), f);
  }
  const auto table = read_file(run.path("table1.csv"));
  CHECK(table.rfind("method,cs_ratio,relative_reduction\nbase,", 0) == 0);
  CHECK(table.find("\nsft_only,") != std::string::npos);
  CHECK(table.find("\nreduce,") != std::string::npos);
  CHECK(table.find("\nreduce_zero,") != std::string::npos);

  // Every input a stage read was produced, with the same digest, by some other stage.
  const auto manifests = run.manifests();
  const auto outputs = all_outputs(run);
  const auto hash = config_hash(cfg);
  for (const auto& m : manifests) {
    CHECK(m.config_hash == hash);
    CHECK(m.seed == 3);
    for (const auto& [name, digest] : m.inputs) {
      REQUIRE_MESSAGE(outputs.count(name), name);
      CHECK(outputs.at(name) == digest);
    }
  }

  const pipeline::Run again(cfg, scratch_dir("b"));
  pipeline::run_all(again);
  CHECK(all_outputs(again) == outputs);
  for (const auto& [name, digest] : outputs) CHECK(sha256_file(again.path(name)) == digest);

  // A tampered input is caught before the stage runs.
  write_file(run.path("vocab.csv"), read_file(run.path("vocab.csv")) + "\n");
  CHECK_THROWS_AS(pipeline::train_lm(run), ValidationError);
}

TEST_CASE("zero auxiliary weight reproduces SFT through the whole pipeline") {
  auto cfg = parse_run_config(kMiniConfig);
  cfg.sasft.aux_weight = 0.0;
  const pipeline::Run run(cfg, scratch_dir("zero"));
  pipeline::gen_corpus(run);
  pipeline::train_lm(run);
  pipeline::train_sae(run);
  pipeline::find_features(run);
  pipeline::run_sasft(run, sasft::Mode::sft_only);
  pipeline::run_sasft(run, sasft::Mode::reduce);
  CHECK(sha256_file(run.path("sasft_reduce.ckpt")) == sha256_file(run.path("sasft_sft_only.ckpt")));
  const auto log = read_file(run.path("sasft_reduce_log.csv"));
  CHECK(log != read_file(run.path("sasft_sft_only_log.csv")));  // aux is still logged
}

TEST_CASE("stages report missing inputs") {
  const pipeline::Run run(parse_run_config(kMiniConfig), scratch_dir("missing"));
  CHECK_THROWS_AS(pipeline::train_lm(run), MissingInputError);
  pipeline::gen_corpus(run);
  try {
    pipeline::eval_cs(run, "reduce");
    FAIL("no error");
  } catch (const MissingInputError& e) {
    CHECK(std::string(e.what()).find("sasft_reduce.ckpt") != std::string::npos);
  }
}

TEST_CASE("report charts and summaries") {
  const std::string sweep =
      "feature_role,lambda,n_prompts,n_switched,cs_ratio\n"
      "target,0,100,10,0.1\ntarget,1,100,8,0.08\ntarget,2,100,5,0.05\ntarget,4,100,2,0.02\ntarget,8,100,0,0\n"
      "control,0,100,10,0.1\ncontrol,1,100,10,0.1\ncontrol,2,100,11,0.11\ncontrol,4,100,9,0.09\ncontrol,8,100,10,0.1\n";
  const auto series = report::sweep_series(sweep);
  REQUIRE(series.size() == 2);
  CHECK(series[0].name == "target");
  CHECK(series[0].points.size() == 5);
  CHECK(series[1].points[4] == std::pair{8.0, 0.1});
  const auto svg = report::line_chart_svg("sweep", "lambda", "cs", series);
  const std::regex polyline("<polyline[^>]*points=\"([^\"]*)\"");
  std::size_t lines = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), polyline); it != std::sregex_iterator(); ++it) {
    const std::string pts = (*it)[1];
    CHECK(std::count(pts.begin(), pts.end(), ',') == 5);
    ++lines;
  }
  CHECK(lines == 2);
  CHECK(svg.rfind("<svg xmlns=", 0) == 0);
  CHECK(svg.find("href") == std::string::npos);

  const auto profile = report::profile_series("offset,mean_preact,count\n-1,0.5,3\n0,,0\n1,2,1\n");
  CHECK(profile.points == std::vector<std::pair<double, double>>{{-1, 0.5}, {1, 2}});

  // An empty run directory still yields (empty) summaries and a warning.
  const pipeline::Run run(parse_run_config(kMiniConfig), scratch_dir("empty"));
  const auto result = report::write_report(run);
  CHECK(result.warnings.size() == 1);
  CHECK(read_file(run.path("summary.csv")) == "method,ce,aux,n_prompts,n_switched,cs_ratio,relative_reduction,z,p\n");
  CHECK(read_file(run.path("table1.csv")) == "method,cs_ratio,relative_reduction\n");
}

TEST_CASE("summary rows carry training losses, ratios and perplexity deltas") {
  const auto dir = scratch_dir("summary");
  fs::create_directories(dir);
  write_file(dir / "sasft_sft_only_log.csv", "step,ce,aux,total,lr\n0,3,0,3,0.001\n1,2.5,0,2.5,0.001\n");
  write_file(dir / "sasft_reduce_log.csv", "step,ce,aux,total,lr\n0,3,1,3.05,0.001\n1,2.6,0.4,2.62,0.001\n");
  write_file(dir / "cs_sft_only.json", R"({"lang":"synB","n_prompts":1000,"n_switched":40,"ratio":0.04})");
  write_file(dir / "cs_reduce.json", R"({"lang":"synB","n_prompts":1000,"n_switched":10,"ratio":0.01})");
  write_file(dir / "ppl_sft_only.json", R"({"model":"sft_only","ppl":{"synA":10,"synB":20}})");
  write_file(dir / "ppl_reduce.json", R"({"model":"reduce","ppl":{"synA":10.5,"synB":20}})");
  write_file(dir / "ztest_sft_only_vs_reduce.json", R"({"x1":40,"n1":1000,"x2":10,"n2":1000,"z":4.3,"p":1e-5,"degenerate":false})");
  const auto rows = report::summarize(dir);
  REQUIRE(rows.size() == 2);
  const auto& r = rows[1];
  CHECK(r.method == "reduce");
  CHECK(*r.ce == 2.6);
  CHECK(*r.aux == 0.4);
  CHECK(*r.cs_ratio == 0.01);
  CHECK(*r.relative_reduction == doctest::Approx(0.75));
  CHECK(r.ppl_delta.at("synA") == doctest::Approx(0.05));
  CHECK(r.ppl_delta.at("synB") == 0.0);
  CHECK(*r.z == 4.3);
  const auto csv = report::summary_csv(rows);
  CHECK(csv.rfind("method,ce,aux,n_prompts,n_switched,cs_ratio,relative_reduction,ppl_synA,ppl_synB,ppl_delta_synA,"
                  "ppl_delta_synB,z,p\nsft_only,2.5,0,1000,40,0.04,0,10,20,0,0,,\nreduce,2.6,0.4,1000,10,0.01,0.75,",
                  0) == 0);
  CHECK(report::table1_csv(rows) == "method,cs_ratio,relative_reduction\nsft_only,0.04,0\nreduce,0.01,0.75\n");
}
