#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace traceseq::ehr {

// Records as produced by the generator and stored in cohort files: codes and
// observations are strings, not yet mapped to vocabulary indices.
struct RawVisit {
  std::vector<std::string> codes;
  std::vector<std::string> observations;
  int admit_day = 0;       // days since the patient's first visit
  double age_years = 0.0;  // age at this visit
};

struct RawPatient {
  std::string id;
  std::string race;
  std::string gender;
  int label = 0;
  std::vector<RawVisit> visits;  // feature visits only; the label visit is not stored
};

// Index-mapped visit. code_indices and observation_indices are sorted.
struct Visit {
  std::vector<std::size_t> code_indices;
  std::vector<std::size_t> observation_indices;
  int admit_day = 0;
  double age_years = 0.0;
};

struct PatientRecord {
  std::string id;
  std::size_t race = 0;
  std::size_t gender = 0;
  std::vector<Visit> visits;
  int label = 0;
};

}  // namespace traceseq::ehr
