#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "traceseq/cli/config.hpp"
#include "traceseq/ehr/cohort_file.hpp"
#include "traceseq/predictor/predictor.hpp"

namespace traceseq::cli {

enum class Stage {
  kGenCohort,
  kPretrainCodes,
  kPretrainAutoencoder,
  kTrain,
  kEvaluate,
  kExportAttention,
  kExportEmbeddings,
};

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);  // ConfigError on unknown names
const std::vector<Stage>& all_stages();

// Where each stage puts its artifacts, relative to the output directory.
struct Layout {
  std::filesystem::path out;

  std::filesystem::path cohort() const { return out / "cohort" / "cohort.jsonl"; }
  std::filesystem::path matches() const { return out / "cohort" / "matches.csv"; }
  std::filesystem::path cohort_summary() const { return out / "cohort" / "summary.json"; }
  std::filesystem::path codes() const { return out / "codes"; }
  std::filesystem::path autoencoder(const std::string& kind) const { return out / "autoencoder" / kind; }
  std::filesystem::path model(const std::string& variant) const { return out / "models" / variant; }
  std::filesystem::path attention() const { return out / "exports" / "attention"; }
  std::filesystem::path embeddings(const std::string& variant) const {
    return out / "exports" / ("embeddings_" + variant + ".csv");
  }
  std::filesystem::path manifests() const { return out / "manifests"; }
};

struct RunOptions {
  ExperimentConfig config;
  std::vector<std::string> variants;  // overrides config.train.variants when non-empty
  std::ostream* log = nullptr;        // progress lines; null = quiet
};

struct StageResult {
  std::vector<std::filesystem::path> outputs;
  std::vector<std::filesystem::path> manifests;  // one per variant or encoder kind
};

// Runs one stage. Throws MissingPrerequisite naming the stage whose artifacts
// are absent, ConfigError for unusable settings.
StageResult run_stage(Stage stage, const RunOptions& options);

// Patients of the cohort file with their splits, sequences and count vectors.
struct Dataset {
  ehr::CohortFile file;
  ehr::FeatureSpace space;
  std::vector<predictor::PatientExample> examples;
  std::size_t dropped = 0;  // patients left without a usable visit
};
Dataset load_dataset(const ExperimentConfig& cfg);

predictor::ModelConfig model_config(const ExperimentConfig& cfg, const ehr::FeatureSpace& space,
                                    predictor::Variant variant);

// SHA-256 of an artifact. For metrics.json the wall_clock member is left out,
// so timing noise does not break the output-hash chain.
std::string artifact_hash(const std::filesystem::path& path);

}  // namespace traceseq::cli
