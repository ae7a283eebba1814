#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "traceseq/ehr/record.hpp"

namespace traceseq::ehr {

enum class CodeKind { kDiagnosis, kProcedure, kMedication };

// Kind from the code prefix: dx_ (diagnosis), px_ (procedure), rx_ (medication).
CodeKind code_kind(std::string_view code);

// Dense string -> index map with indices assigned in lexicographic order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> sorted_entries);

  std::size_t size() const { return entries_.size(); }
  std::optional<std::size_t> find(std::string_view key) const;
  std::size_t index_of(std::string_view key) const;  // throws DataError when absent
  const std::string& name(std::size_t index) const { return entries_.at(index); }
  const std::vector<std::string>& entries() const { return entries_; }
  std::string hash() const;

  bool operator==(const Vocabulary& other) const { return entries_ == other.entries_; }

 private:
  std::vector<std::string> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class CodeVocabulary : public Vocabulary {
 public:
  CodeVocabulary() = default;
  CodeVocabulary(std::vector<std::string> sorted_entries, std::size_t min_count);

  CodeKind kind(std::size_t index) const { return code_kind(name(index)); }
  std::size_t min_count() const { return min_count_; }

 private:
  std::size_t min_count_ = 1;
};

using ObservationVocabulary = Vocabulary;

struct Vocabularies {
  CodeVocabulary codes;
  ObservationVocabulary observations;
};

// Codes occurring in fewer than min_count visits are dropped, label-defining
// codes are excluded, and indices follow lexicographic order.
Vocabularies build_vocabularies(const std::vector<RawPatient>& corpus, std::size_t min_count,
                                const std::set<std::string>& label_codes = {});

}  // namespace traceseq::ehr
