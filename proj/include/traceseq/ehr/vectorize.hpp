#pragma once

#include <set>
#include <string>
#include <vector>

#include "traceseq/ehr/record.hpp"
#include "traceseq/ehr/vocab.hpp"
#include "traceseq/numkit/dense_array.hpp"

namespace traceseq::ehr {

// Everything needed to turn records into fixed-width vectors.
// Feature layout of x' = [x; d]:
//   codes | observations | race one-hot | gender one-hot | log1p(age) | log1p(day)
struct FeatureSpace {
  CodeVocabulary codes;
  ObservationVocabulary observations;
  Vocabulary races;
  Vocabulary genders;

  std::size_t code_count() const { return codes.size(); }
  std::size_t observation_count() const { return observations.size(); }
  std::size_t demographic_count() const { return races.size() + genders.size(); }
  std::size_t non_code_dim() const { return observations.size() + demographic_count() + 2; }
  std::size_t total_dim() const { return codes.size() + non_code_dim(); }

  // Offsets into x'.
  std::size_t observation_offset() const { return codes.size(); }
  std::size_t race_offset() const { return codes.size() + observations.size(); }
  std::size_t gender_offset() const { return race_offset() + races.size(); }
  std::size_t numeric_offset() const { return gender_offset() + genders.size(); }

  // Human-readable name of feature i of x'.
  std::string feature_name(std::size_t i) const;
};

FeatureSpace build_feature_space(const std::vector<RawPatient>& corpus, std::size_t min_count,
                                 const std::set<std::string>& label_codes = {});

// Maps strings to indices. Codes or observations outside the vocabularies are
// dropped; visits left without a diagnosis code are dropped.
PatientRecord index_patient(const RawPatient& raw, const FeatureSpace& space);

struct VisitVector {
  numkit::DenseArray x;  // multi-hot codes, |C|
  numkit::DenseArray d;  // observations, race, gender, log1p(age), log1p(day)

  numkit::DenseArray concat() const;
};

VisitVector vectorize_visit(const Visit& visit, const PatientRecord& patient, const FeatureSpace& space);

// The last min(T, max_visits) visits in chronological order.
std::vector<VisitVector> assemble_sequence(const PatientRecord& patient, const FeatureSpace& space,
                                           std::size_t max_visits);

// Recovers code and observation index sets from a vector (inverse of the
// multi-hot part of vectorize_visit).
struct DecodedVisit {
  std::vector<std::size_t> code_indices;
  std::vector<std::size_t> observation_indices;
};
DecodedVisit decode_visit(const VisitVector& v, const FeatureSpace& space);

}  // namespace traceseq::ehr
