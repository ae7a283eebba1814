#include "traceseq/cohort/cohort.hpp"

#include <algorithm>
#include <map>

#include "traceseq/cohort/propensity.hpp"
#include "traceseq/errors.hpp"
#include "traceseq/numkit/rng.hpp"

namespace traceseq::cohort {

Cohort build_cohort(const std::vector<ehr::RawPatient>& population, const CohortConfig& cfg) {
  std::vector<const ehr::RawPatient*> cases, controls;
  for (const auto& p : population) {
    if (p.visits.empty()) continue;
    (p.label == 1 ? cases : controls).push_back(&p);
  }
  auto by_id = [](const ehr::RawPatient* a, const ehr::RawPatient* b) { return a->id < b->id; };
  std::sort(cases.begin(), cases.end(), by_id);
  std::sort(controls.begin(), controls.end(), by_id);
  if (cfg.max_cases > 0 && cases.size() > cfg.max_cases) {
    numkit::Rng rng(numkit::derive_seed(cfg.seed, 0xCA5E));
    std::shuffle(cases.begin(), cases.end(), rng);
    cases.resize(cfg.max_cases);
    std::sort(cases.begin(), cases.end(), by_id);
  }

  std::vector<ehr::RawPatient> fit_input;
  for (const auto* p : cases) fit_input.push_back(*p);
  for (const auto* p : controls) fit_input.push_back(*p);
  const auto fit = fit_propensity(fit_input);

  std::vector<Candidate> case_cands, control_cands;
  for (std::size_t i = 0; i < cases.size(); ++i) case_cands.push_back({cases[i]->id, fit.scores[i]});
  for (std::size_t j = 0; j < controls.size(); ++j) {
    control_cands.push_back({controls[j]->id, fit.scores[cases.size() + j]});
  }

  Cohort cohort;
  cohort.match_table = greedy_match(case_cands, control_cands, cfg.controls_per_case);

  std::map<std::string, const ehr::RawPatient*> chosen;
  for (const auto* p : cases) chosen[p->id] = p;
  std::map<std::string, const ehr::RawPatient*> control_index;
  for (const auto* p : controls) control_index[p->id] = p;
  for (const auto& m : cohort.match_table) chosen[m.control_id] = control_index.at(m.control_id);
  std::vector<Labeled> labeled;
  for (const auto& [id, p] : chosen) {
    cohort.patients.push_back(*p);
    labeled.push_back({id, p->label});
  }
  cohort.split = stratified_split(labeled, cfg.fractions, cfg.seed);
  return cohort;
}

std::vector<std::string> split_ids(const Cohort& cohort, Split which) {
  std::vector<std::string> out;
  for (const auto& [id, s] : cohort.split) {
    if (s == which) out.push_back(id);
  }
  return out;
}

}  // namespace traceseq::cohort
