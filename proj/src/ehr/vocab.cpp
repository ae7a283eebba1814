#include "traceseq/ehr/vocab.hpp"

#include <algorithm>

#include "traceseq/errors.hpp"
#include "traceseq/io.hpp"

namespace traceseq::ehr {

CodeKind code_kind(std::string_view code) {
  if (code.starts_with("dx_")) return CodeKind::kDiagnosis;
  if (code.starts_with("px_")) return CodeKind::kProcedure;
  if (code.starts_with("rx_")) return CodeKind::kMedication;
  throw DataError("medical code '" + std::string(code) + "' has no dx_/px_/rx_ prefix");
}

Vocabulary::Vocabulary(std::vector<std::string> sorted_entries) : entries_(std::move(sorted_entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (i > 0 && !(entries_[i - 1] < entries_[i])) {
      throw ValidationError("vocabulary entries must be strictly increasing near '" + entries_[i] + "'");
    }
    index_.emplace(entries_[i], i);
  }
}

std::optional<std::size_t> Vocabulary::find(std::string_view key) const {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::index_of(std::string_view key) const {
  auto found = find(key);
  if (!found) throw DataError("'" + std::string(key) + "' is not in the vocabulary");
  return *found;
}

std::string Vocabulary::hash() const {
  std::string joined;
  for (const auto& e : entries_) {
    joined += e;
    joined += '\n';
  }
  return io::sha256_hex(joined);
}

CodeVocabulary::CodeVocabulary(std::vector<std::string> sorted_entries, std::size_t min_count)
    : Vocabulary(std::move(sorted_entries)), min_count_(min_count) {}

Vocabularies build_vocabularies(const std::vector<RawPatient>& corpus, std::size_t min_count,
                                const std::set<std::string>& label_codes) {
  if (corpus.empty()) throw ValidationError("cannot build vocabularies from an empty corpus");
  std::map<std::string, std::size_t> code_visits;
  std::set<std::string> observations;
  for (const auto& patient : corpus) {
    for (const auto& visit : patient.visits) {
      // Visit-level occurrence: a code repeated within a visit counts once.
      std::set<std::string> distinct(visit.codes.begin(), visit.codes.end());
      for (const auto& code : distinct) {
        code_kind(code);
        ++code_visits[code];
      }
      observations.insert(visit.observations.begin(), visit.observations.end());
    }
  }
  std::vector<std::string> kept;
  for (const auto& [code, count] : code_visits) {
    if (count >= min_count && !label_codes.contains(code)) kept.push_back(code);
  }
  return Vocabularies{CodeVocabulary(std::move(kept), min_count),
                      Vocabulary(std::vector<std::string>(observations.begin(), observations.end()))};
}

}  // namespace traceseq::ehr
