#include "traceseq/numkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <nlohmann/json.hpp>

#include "traceseq/errors.hpp"
#include "traceseq/io.hpp"

namespace traceseq::numkit {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {
std::string blob_bytes(const ParameterSet& params) {
  std::string blob;
  blob.reserve(params.element_count() * sizeof(double));
  for (const auto& [_, p] : params) {
    blob.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(double));
  }
  return blob;
}
}  // namespace

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& manifest_path, std::uint64_t seed) {
  auto blob_path = manifest_path;
  blob_path.replace_extension(".bin");
  json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little";
  manifest["seed"] = seed;
  manifest["blob"] = blob_path.filename().string();
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& [name, p] : params) {
    entries.push_back({{"name", name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.size() * sizeof(double);
  }
  manifest["params"] = std::move(entries);
  const std::string blob = blob_bytes(params);
  manifest["blob_sha256"] = io::sha256_hex(blob);
  io::write_atomic(blob_path, blob);
  io::write_atomic(manifest_path, manifest.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path)) throw DataError("checkpoint not found: " + manifest_path.string());
  const json manifest = json::parse(io::read_file(manifest_path));
  if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint format version in " + manifest_path.string());
  }
  if (manifest.at("dtype").get<std::string>() != "float64") throw DataError("checkpoint dtype must be float64");
  const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  const std::string blob = io::read_file(blob_path);
  LoadedCheckpoint out;
  out.seed = manifest.at("seed").get<std::uint64_t>();
  for (const auto& entry : manifest.at("params")) {
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    DenseArray value(shape);
    const std::size_t bytes = value.size() * sizeof(double);
    if (offset + bytes > blob.size()) throw DataError("checkpoint blob truncated at " + entry.at("name").dump());
    std::memcpy(value.data(), blob.data() + offset, bytes);
    out.params.add(entry.at("name").get<std::string>(), std::move(value));
  }
  return out;
}

std::string parameter_hash(const ParameterSet& params) {
  std::string bytes;
  for (const auto& [name, p] : params) {
    bytes += name;
    bytes += shape_string(p.value.shape());
    bytes.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(double));
  }
  return io::sha256_hex(bytes);
}

}  // namespace traceseq::numkit
