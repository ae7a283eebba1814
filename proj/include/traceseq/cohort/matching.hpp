#pragma once

#include <string>
#include <vector>

namespace traceseq::cohort {

struct Candidate {
  std::string id;
  double score = 0.0;  // propensity in (0,1)
};

struct MatchEntry {
  std::string case_id;
  std::string control_id;
  double distance = 0.0;  // |logit(case) - logit(control)|
};

double logit(double p);

// Cases in descending score order (ties by id) each take their k nearest
// unused controls on the logit scale (ties by id). Without replacement.
std::vector<MatchEntry> greedy_match(std::vector<Candidate> cases, const std::vector<Candidate>& controls,
                                     std::size_t k);

std::string match_table_csv(const std::vector<MatchEntry>& table);

}  // namespace traceseq::cohort
