#pragma once

#include <map>
#include <string>
#include <vector>

#include "traceseq/cohort/generator.hpp"
#include "traceseq/cohort/matching.hpp"
#include "traceseq/cohort/split.hpp"
#include "traceseq/ehr/record.hpp"

namespace traceseq::cohort {

struct Cohort {
  std::vector<ehr::RawPatient> patients;  // ordered by id
  std::vector<MatchEntry> match_table;
  std::map<std::string, Split> split;
};

struct CohortConfig {
  std::size_t controls_per_case = 6;
  // Upper bound on cases drawn into the study (0 = all eligible cases).
  std::size_t max_cases = 0;
  SplitFractions fractions;
  std::uint64_t seed = 1;
};

// Eligibility, propensity fit, greedy matching and splitting.
Cohort build_cohort(const std::vector<ehr::RawPatient>& population, const CohortConfig& cfg);

std::vector<std::string> split_ids(const Cohort& cohort, Split which);

}  // namespace traceseq::cohort
