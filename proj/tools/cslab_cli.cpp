#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "cslab/pipeline.hpp"
#include "cslab/report.hpp"

using namespace cslab;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

pipeline::Run open_run(const Globals& g) {
  if (g.config.empty()) throw ValidationError("--config is required");
  if (g.out.empty()) throw ValidationError("--out is required");
  RunConfig cfg = load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  pipeline::Logger log;
  if (!g.quiet) log = [](const std::string& msg) { std::cerr << msg << "\n"; };
  return pipeline::Run(std::move(cfg), g.out, log);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Code-switching lab: synthetic corpora, micro-LM, SAE features, ablation and SASFT"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (YAML)");
  app.add_option("--seed", g.seed, "Master seed; overrides the config");
  app.add_option("--out", g.out, "Run directory");
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");
  app.fallthrough();

  std::function<void()> action;
  auto simple = [&](const std::string& name, const std::string& help, auto stage) {
    app.add_subcommand(name, help)->callback([&, stage] { action = [&, stage] { stage(open_run(g)); }; });
  };
  simple("gen-corpus", "Generate the synthetic corpus, prompts and vocabulary",
         [](const pipeline::Run& r) { pipeline::gen_corpus(r); });
  simple("train-lm", "Pretrain the micro-LM", [](const pipeline::Run& r) { pipeline::train_lm(r); });
  simple("train-sae", "Train one SAE per configured layer", [](const pipeline::Run& r) { pipeline::train_sae(r); });
  simple("find-features", "Rank language-specific features and estimate thresholds",
         [](const pipeline::Run& r) { pipeline::find_features(r); });
  simple("run-all", "Every stage in order, then the report", [](const pipeline::Run& r) { pipeline::run_all(r); });

  std::string model;
  std::string mode;
  auto with_model = [&](const std::string& name, const std::string& help, auto stage, bool default_analysis) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--model", model, "base or a fine-tuning mode");
    sub->callback([&, stage, default_analysis] {
      action = [&, stage, default_analysis] {
        const auto run = open_run(g);
        const std::string m = model.empty() && default_analysis ? run.config().eval.analysis_model : model;
        if (m.empty()) throw ValidationError("--model is required");
        stage(run, m);
      };
    });
  };
  with_model("eval-cs", "Code-switching ratio of a model",
             [](const pipeline::Run& r, const std::string& m) { pipeline::eval_cs(r, m); }, false);
  with_model("eval-ppl", "Held-out perplexity per language",
             [](const pipeline::Run& r, const std::string& m) { pipeline::eval_ppl(r, m); }, false);
  with_model("ablate-sweep", "Directional ablation sweep of the target and control features",
             [](const pipeline::Run& r, const std::string& m) { pipeline::ablate_sweep(r, m); }, true);
  with_model("profile-preact", "Target-feature pre-activation around the first switched token",
             [](const pipeline::Run& r, const std::string& m) { pipeline::profile_preact(r, m); }, true);

  auto* sasft_cmd = app.add_subcommand("sasft", "Fine-tune the pretrained model");
  sasft_cmd->add_option("--mode", mode, "sft_only, reduce, reduce_zero or enhance (default: config)");
  sasft_cmd->callback([&] {
    action = [&] {
      const auto run = open_run(g);
      pipeline::run_sasft(run, mode.empty() ? run.config().sasft.mode : sasft::parse_mode(mode));
    };
  });

  std::string first = "sft_only", second;
  std::vector<std::size_t> counts;
  auto* z_cmd = app.add_subcommand("ztest", "One-tailed two-proportion z-test");
  z_cmd->add_option("--first", first, "Model expected to switch more often");
  z_cmd->add_option("--second", second, "Model compared against it");
  z_cmd->add_option("--counts", counts, "x1 n1 x2 n2 (no run directory needed)")->expected(4);
  z_cmd->callback([&] {
    action = [&] {
      if (!counts.empty()) {
        std::cout << eval::ztest_json(eval::ztest(counts[0], counts[1], counts[2], counts[3]));
        return;
      }
      if (second.empty()) throw ValidationError("ztest needs --second or --counts");
      pipeline::ztest_models(open_run(g), first, second);
    };
  });

  app.add_subcommand("report", "Summary CSVs and SVG plots from a run directory")->callback([&] {
    action = [&] {
      const auto result = report::write_report(open_run(g));
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    action();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const MissingInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
