#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mvoc {

// FNV-1a over raw bytes; used for dataset/parameter fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  return fnv1a(s.data(), s.size(), h);
}

std::string read_text_file(const std::filesystem::path& p);
std::vector<unsigned char> read_binary_file(const std::filesystem::path& p);

// Writes to a sibling temp file and renames into place.
void atomic_write_file(const std::filesystem::path& p, const void* data, std::size_t n);
void atomic_write_file(const std::filesystem::path& p, const std::string& text);

void append_line(const std::filesystem::path& p, const std::string& line);

std::uint64_t hash_file(const std::filesystem::path& p);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace mvoc
