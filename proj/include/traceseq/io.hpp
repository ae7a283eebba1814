#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace traceseq::io {

// Writes via a sibling temp file and rename, creating parent directories.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace traceseq::io
