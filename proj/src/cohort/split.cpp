#include "traceseq/cohort/split.hpp"

#include <algorithm>
#include <cmath>

#include "traceseq/errors.hpp"
#include "traceseq/numkit/rng.hpp"

namespace traceseq::cohort {

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kValid:
      return "valid";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + name + "'");
}

std::array<std::size_t, 3> split_counts(std::size_t count, const SplitFractions& f) {
  for (double v : {f.train, f.valid, f.test}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("split fractions must lie in [0,1]");
  }
  if (std::abs(f.train + f.valid + f.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  const double n = static_cast<double>(count);
  // The small slack absorbs representation error (0.1 * 126678 = 12667.800000000001).
  const auto train = static_cast<std::size_t>(std::floor(f.train * n + 1e-9));
  const auto valid = std::min(count - train, static_cast<std::size_t>(std::floor(f.valid * n + 1e-9)));
  return {train, valid, count - train - valid};
}

std::map<std::string, Split> stratified_split(const std::vector<Labeled>& patients, const SplitFractions& fractions,
                                              std::uint64_t seed) {
  std::vector<std::string> cases, controls;
  for (const auto& p : patients) (p.label == 1 ? cases : controls).push_back(p.id);
  std::sort(cases.begin(), cases.end());
  std::sort(controls.begin(), controls.end());

  std::map<std::string, Split> out;
  auto apportion = [&](std::vector<std::string>& ids, std::uint64_t stream) {
    numkit::Rng rng(numkit::derive_seed(seed, stream));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto counts = split_counts(ids.size(), fractions);
    std::size_t i = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < counts[s]; ++j) out[ids[i++]] = static_cast<Split>(s);
    }
  };
  apportion(cases, 0);
  apportion(controls, 1);
  return out;
}

}  // namespace traceseq::cohort
