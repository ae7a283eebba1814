#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "traceseq/cli/config.hpp"
#include "traceseq/cli/pipeline.hpp"
#include "traceseq/errors.hpp"
#include "traceseq/numkit/kernels.hpp"
#include "traceseq/predictor/predictor.hpp"

using namespace traceseq;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitMissingStage = 2;
constexpr int kExitConfig = 3;

const char* describe(cli::Stage s) {
  switch (s) {
    case cli::Stage::kGenCohort:
      return "generate the synthetic population, match cases to controls and split";
    case cli::Stage::kPretrainCodes:
      return "pre-train the medical code embedding table";
    case cli::Stage::kPretrainAutoencoder:
      return "pre-train the visit-sequence autoencoder(s)";
    case cli::Stage::kTrain:
      return "fine-tune TRACE and train the ablations and baselines";
    case cli::Stage::kEvaluate:
      return "score trained models on the validation and test splits";
    case cli::Stage::kExportAttention:
      return "write back-projected attention maps for top-scoring test cases";
    case cli::Stage::kExportEmbeddings:
      return "write patient embeddings of the test split";
  }
  return "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staged pipeline for the TRACE chronic-disease risk model", "trace-seq"};
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::vector<std::string> variants;
  app.add_option("--config", config_path, "TOML experiment config (defaults apply when omitted)");
  app.add_option("--seed", seed, "model seed, overrides the config");
  app.add_option("--out", out_dir, "output directory, overrides the config");
  app.add_flag("--quiet", quiet, "suppress progress output");
  app.require_subcommand(1, 1);
  for (auto stage : cli::all_stages()) {
    auto* sub = app.add_subcommand(cli::stage_name(stage), describe(stage));
    sub->fallthrough();
    if (stage == cli::Stage::kTrain || stage == cli::Stage::kEvaluate) {
      sub->add_option("--variant", variants, "model variant(s); default: train.variants from the config");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  numkit::kernels::set_threads(numkit::kernels::threads_from_env(1));

  try {
    auto cfg = config_path.empty() ? cli::parse_config("") : cli::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    for (const auto& v : variants) {
      try {
        predictor::parse_variant(v);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("--variant: ") + e.what());
      }
    }
    const auto stage = cli::parse_stage(app.get_subcommands().front()->get_name());
    cli::RunOptions options{cfg, variants, quiet ? nullptr : &std::cerr};
    const auto result = cli::run_stage(stage, options);
    if (!quiet) {
      for (const auto& m : result.manifests) std::cerr << "manifest: " << m.string() << '\n';
    }
  } catch (const MissingPrerequisite& e) {
    std::cerr << "trace-seq: " << e.what() << '\n';
    return kExitMissingStage;
  } catch (const ConfigError& e) {
    std::cerr << "trace-seq: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "trace-seq: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
