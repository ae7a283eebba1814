#include "traceseq/ehr/vectorize.hpp"

#include <algorithm>
#include <cmath>

#include "traceseq/errors.hpp"

namespace traceseq::ehr {

using numkit::DenseArray;

std::string FeatureSpace::feature_name(std::size_t i) const {
  if (i < codes.size()) return codes.name(i);
  i -= codes.size();
  if (i < observations.size()) return observations.name(i);
  i -= observations.size();
  if (i < races.size()) return "race:" + races.name(i);
  i -= races.size();
  if (i < genders.size()) return "gender:" + genders.name(i);
  i -= genders.size();
  if (i == 0) return "log_age";
  if (i == 1) return "log_day";
  throw DataError("feature index out of range");
}

FeatureSpace build_feature_space(const std::vector<RawPatient>& corpus, std::size_t min_count,
                                 const std::set<std::string>& label_codes) {
  auto vocabs = build_vocabularies(corpus, min_count, label_codes);
  std::set<std::string> races, genders;
  for (const auto& p : corpus) {
    races.insert(p.race);
    genders.insert(p.gender);
  }
  return FeatureSpace{std::move(vocabs.codes), std::move(vocabs.observations),
                      Vocabulary(std::vector<std::string>(races.begin(), races.end())),
                      Vocabulary(std::vector<std::string>(genders.begin(), genders.end()))};
}

PatientRecord index_patient(const RawPatient& raw, const FeatureSpace& space) {
  PatientRecord out;
  out.id = raw.id;
  out.race = space.races.index_of(raw.race);
  out.gender = space.genders.index_of(raw.gender);
  out.label = raw.label;
  for (const auto& rv : raw.visits) {
    Visit v;
    v.admit_day = rv.admit_day;
    v.age_years = rv.age_years;
    bool has_diagnosis = false;
    for (const auto& code : rv.codes) {
      if (auto idx = space.codes.find(code)) {
        v.code_indices.push_back(*idx);
        has_diagnosis = has_diagnosis || space.codes.kind(*idx) == CodeKind::kDiagnosis;
      }
    }
    if (!has_diagnosis) continue;
    for (const auto& obs : rv.observations) {
      if (auto idx = space.observations.find(obs)) v.observation_indices.push_back(*idx);
    }
    std::sort(v.code_indices.begin(), v.code_indices.end());
    v.code_indices.erase(std::unique(v.code_indices.begin(), v.code_indices.end()), v.code_indices.end());
    std::sort(v.observation_indices.begin(), v.observation_indices.end());
    v.observation_indices.erase(std::unique(v.observation_indices.begin(), v.observation_indices.end()),
                                v.observation_indices.end());
    out.visits.push_back(std::move(v));
  }
  return out;
}

DenseArray VisitVector::concat() const {
  std::vector<double> values(x.values().begin(), x.values().end());
  values.insert(values.end(), d.values().begin(), d.values().end());
  return DenseArray::vector(std::move(values));
}

VisitVector vectorize_visit(const Visit& visit, const PatientRecord& patient, const FeatureSpace& space) {
  const std::size_t nc = space.code_count(), no = space.observation_count();
  VisitVector out{DenseArray({nc}, 0.0), DenseArray({space.non_code_dim()}, 0.0)};
  for (auto i : visit.code_indices) {
    if (i >= nc) throw DataError("code index " + std::to_string(i) + " out of range for |C|=" + std::to_string(nc));
    out.x[i] = 1.0;
  }
  for (auto i : visit.observation_indices) {
    if (i >= no) {
      throw DataError("observation index " + std::to_string(i) + " out of range for |obs|=" + std::to_string(no));
    }
    out.d[i] = 1.0;
  }
  if (patient.race >= space.races.size()) throw DataError("race index " + std::to_string(patient.race) + " out of range");
  if (patient.gender >= space.genders.size()) {
    throw DataError("gender index " + std::to_string(patient.gender) + " out of range");
  }
  out.d[no + patient.race] = 1.0;
  out.d[no + space.races.size() + patient.gender] = 1.0;
  const std::size_t tail = no + space.demographic_count();
  if (visit.age_years < 0 || visit.admit_day < 0) throw DataError("negative age or admit day");
  out.d[tail] = std::log1p(visit.age_years);
  out.d[tail + 1] = std::log1p(static_cast<double>(visit.admit_day));
  return out;
}

std::vector<VisitVector> assemble_sequence(const PatientRecord& patient, const FeatureSpace& space,
                                           std::size_t max_visits) {
  if (patient.visits.empty()) throw ValidationError("patient " + patient.id + " has no usable visits");
  if (max_visits == 0) throw ValidationError("max_visits must be positive");
  const std::size_t start = patient.visits.size() > max_visits ? patient.visits.size() - max_visits : 0;
  std::vector<VisitVector> out;
  out.reserve(patient.visits.size() - start);
  for (std::size_t t = start; t < patient.visits.size(); ++t) {
    out.push_back(vectorize_visit(patient.visits[t], patient, space));
  }
  return out;
}

DecodedVisit decode_visit(const VisitVector& v, const FeatureSpace& space) {
  DecodedVisit out;
  for (std::size_t i = 0; i < space.code_count(); ++i) {
    if (v.x[i] != 0.0) out.code_indices.push_back(i);
  }
  for (std::size_t i = 0; i < space.observation_count(); ++i) {
    if (v.d[i] != 0.0) out.observation_indices.push_back(i);
  }
  return out;
}

}  // namespace traceseq::ehr
