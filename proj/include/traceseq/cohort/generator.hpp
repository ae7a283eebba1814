#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "traceseq/ehr/record.hpp"

namespace traceseq::cohort {

// Onset hazard evaluated before every visit after the first:
//   logit h_t = intercept + sum_k w_k E_k + interaction * E_0 * E_1 + age_weight * (age - 50) / 10
// with E_k the decayed exposure to risk code k over earlier visits
// (E_k <- decay * E_k + [code k present]).
struct HazardConfig {
  double intercept = -4.5;
  std::vector<double> risk_weights = {1.2, 1.2};  // hypertension and diabetes analogs
  double interaction = 1.0;
  double age_weight = 0.2;
  double decay = 0.5;
};

struct GeneratorConfig {
  std::uint64_t seed = 1;
  // Seed of the shared latent structure (topics); corpora drawn from the same
  // world share code co-occurrence patterns.
  std::uint64_t world_seed = 1;
  std::size_t population = 4000;
  std::size_t num_codes = 100;
  std::size_t num_observations = 50;
  double mean_visits = 6.0;
  std::size_t max_generated_visits = 40;
  double mean_gap_days = 90.0;
  std::size_t num_topics = 10;
  double codes_per_visit = 3.0;
  double observations_per_visit = 2.0;
  double topic_concentration = 0.3;
  // Multiplier on risk-topic weight after a patient's progression point.
  double progression_boost = 4.0;
  HazardConfig hazard;
  std::vector<std::string> races = {"asian", "black", "other", "white"};
  std::vector<double> race_probs = {0.1, 0.2, 0.1, 0.6};
  std::vector<std::string> genders = {"female", "male"};
  std::vector<double> gender_probs = {0.5, 0.5};
  double min_age = 18.0;
  double max_age = 80.0;
};

void validate(const GeneratorConfig& cfg);

// Code names in generation order: dx_*, px_*, rx_*. The first
// hazard.risk_weights.size() diagnosis codes are the risk codes.
std::vector<std::string> generator_codes(const GeneratorConfig& cfg);
std::vector<std::string> risk_codes(const GeneratorConfig& cfg);

// Cases end right before the onset visit; controls have their final (label)
// visit removed. Patients without any feature visit are not emitted.
std::vector<ehr::RawPatient> generate_population(const GeneratorConfig& cfg);

// Corpus for code-embedding pre-training: drawn from the same world with its
// own seed, codes whose generator index is congruent to drop_every-1 are
// removed (out-of-vocabulary downstream), and extra_codes unseen px_ codes are
// mixed in so the pre-training vocabulary is larger.
struct PretrainCorpusConfig {
  std::uint64_t seed = 101;
  std::size_t patients = 2000;
  std::size_t extra_codes = 60;
  std::size_t drop_every = 10;
  double extra_code_rate = 1.0;  // mean extra codes per visit
};
std::vector<ehr::RawPatient> generate_pretrain_corpus(const GeneratorConfig& world, const PretrainCorpusConfig& cfg);

}  // namespace traceseq::cohort
