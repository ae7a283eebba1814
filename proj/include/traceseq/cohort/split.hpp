#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace traceseq::cohort {

enum class Split { kTrain, kValid, kTest };

std::string split_name(Split s);
Split parse_split(const std::string& name);

struct SplitFractions {
  double train = 0.75;
  double valid = 0.10;
  double test = 0.15;
};

struct Labeled {
  std::string id;
  int label = 0;
};

// Cases and controls are shuffled and apportioned separately:
// floor(fraction * count) to train and valid, the remainder to test.
std::map<std::string, Split> stratified_split(const std::vector<Labeled>& patients, const SplitFractions& fractions,
                                              std::uint64_t seed);

// Per-class counts the rule above assigns: [train, valid, test].
std::array<std::size_t, 3> split_counts(std::size_t count, const SplitFractions& fractions);

}  // namespace traceseq::cohort
