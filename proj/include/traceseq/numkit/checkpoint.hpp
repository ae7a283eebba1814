#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "traceseq/numkit/param.hpp"

namespace traceseq::numkit {

inline constexpr int kCheckpointFormatVersion = 1;

// Writes <stem>.json (manifest) and <stem>.bin (little-endian float64 blob).
// `manifest_path` names the .json file; the blob sits next to it.
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& manifest_path, std::uint64_t seed);

struct LoadedCheckpoint {
  ParameterSet params;
  std::uint64_t seed = 0;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest_path);

// SHA-256 over names, shapes and values in name order.
std::string parameter_hash(const ParameterSet& params);

}  // namespace traceseq::numkit
