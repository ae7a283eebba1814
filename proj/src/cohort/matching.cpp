#include "traceseq/cohort/matching.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "traceseq/errors.hpp"

namespace traceseq::cohort {

double logit(double p) {
  const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(q / (1.0 - q));
}

std::vector<MatchEntry> greedy_match(std::vector<Candidate> cases, const std::vector<Candidate>& controls,
                                     std::size_t k) {
  if (k == 0) throw ValidationError("controls per case must be positive");
  if (controls.size() < k * cases.size()) {
    throw ValidationError("insufficient controls: need " + std::to_string(k * cases.size()) + ", have " +
                          std::to_string(controls.size()) + " (deficit " +
                          std::to_string(k * cases.size() - controls.size()) + ")");
  }
  std::sort(cases.begin(), cases.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  std::vector<double> control_logit(controls.size());
  for (std::size_t j = 0; j < controls.size(); ++j) control_logit[j] = logit(controls[j].score);
  std::vector<bool> used(controls.size(), false);

  std::vector<MatchEntry> table;
  table.reserve(k * cases.size());
  std::vector<std::pair<double, std::size_t>> ranked;
  for (const auto& c : cases) {
    const double lc = logit(c.score);
    ranked.clear();
    for (std::size_t j = 0; j < controls.size(); ++j) {
      if (!used[j]) ranked.emplace_back(std::abs(lc - control_logit[j]), j);
    }
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(),
                      [&](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first < b.first;
                        return controls[a.second].id < controls[b.second].id;
                      });
    for (std::size_t m = 0; m < k; ++m) {
      used[ranked[m].second] = true;
      table.push_back(MatchEntry{c.id, controls[ranked[m].second].id, ranked[m].first});
    }
  }
  return table;
}

std::string match_table_csv(const std::vector<MatchEntry>& table) {
  std::ostringstream out;
  out << "case_id,control_id,distance\n";
  char buf[64];
  for (const auto& e : table) {
    std::snprintf(buf, sizeof buf, "%.17g", e.distance);
    out << e.case_id << ',' << e.control_id << ',' << buf << '\n';
  }
  return out.str();
}

}  // namespace traceseq::cohort
