#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "traceseq/cohort/cohort.hpp"
#include "traceseq/cohort/generator.hpp"
#include "traceseq/numkit/adadelta.hpp"

namespace traceseq::cli {

struct CodeStageConfig {
  std::size_t dim = 128;
  std::size_t window = 1;
  std::size_t epochs = 10;
  std::size_t batch_size = 100;
};

struct AutoencoderStageConfig {
  std::size_t n_tilde = 100;
  std::size_t d_z = 128;
  std::size_t d_emb = 128;
  std::size_t d_h = 128;
  std::size_t d_ff = 512;
  double dropout = 0.5;
  std::size_t epochs = 50;
  std::size_t batch_size = 100;
  std::vector<std::string> visit_encoders = {"transformer", "dense"};
};

struct TrainStageConfig {
  std::vector<std::string> variants = {"TRACE", "TRACE_base", "RACE", "RACE_base", "LR", "MLP", "RNN", "BiRNN"};
  std::size_t epochs = 50;
  std::size_t batch_size = 100;
  std::size_t d_att = 128;
  std::size_t mlp_hidden = 128;
};

struct ExportStageConfig {
  std::string variant = "TRACE";
  std::size_t cases = 1;  // highest-scoring test cases whose attention is exported
};

// Everything a run depends on. The data (generator, cohort) carry their own
// seeds; `seed` drives model initialization, shuffling and dropout.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  cohort::GeneratorConfig generator;
  cohort::PretrainCorpusConfig pretrain_corpus;
  cohort::CohortConfig cohort;
  std::size_t min_count = 50;
  std::size_t max_visits = 30;
  std::set<std::string> label_codes;
  CodeStageConfig codes;
  AutoencoderStageConfig autoencoder;
  TrainStageConfig train;
  numkit::AdadeltaConfig optimizer;
  ExportStageConfig export_;
};

// Parses TOML text; unknown keys and out-of-range values throw ConfigError
// whose message starts with the offending field path.
ExperimentConfig parse_config(const std::string& toml_text);
ExperimentConfig load_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& cfg);

// Normalized form of every setting except `out`; its hash identifies a run.
std::string config_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace traceseq::cli
