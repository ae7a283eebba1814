#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "traceseq/ehr/record.hpp"
#include "traceseq/ehr/vectorize.hpp"

namespace traceseq::ehr {

inline constexpr int kCohortFormatVersion = 1;

// Newline-delimited JSON: a header object on the first line, then one
// patient per line. `split` is "train", "valid", "test" or empty.
struct CohortFileHeader {
  std::uint64_t generator_seed = 0;
  std::size_t min_count = 1;
  std::set<std::string> label_codes;
  std::string code_vocab_hash;
  std::string observation_vocab_hash;
};

struct CohortFile {
  CohortFileHeader header;
  std::vector<RawPatient> patients;
  std::vector<std::string> splits;  // parallel to patients
};

std::string serialize_cohort(const CohortFile& file);
CohortFile parse_cohort(const std::string& text);

void write_cohort(const std::filesystem::path& path, const CohortFile& file);
// Re-derives the vocabularies and rejects files whose header hashes differ.
CohortFile read_cohort(const std::filesystem::path& path);

// The feature space the header hashes describe.
FeatureSpace feature_space_of(const CohortFile& file);

}  // namespace traceseq::ehr
