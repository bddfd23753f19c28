#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "nss/errors.hpp"
#include "nss/version.hpp"

namespace nss {

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Shortest round-trip decimal rendering; deterministic across runs.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string to_hex16(std::uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[x & 0xf];
    x >>= 4;
  }
  return out;
}

/// Provenance line stamped on every emitted artifact: engine version, seed,
/// and a hash of the generating configuration.
inline std::string provenance_line(std::uint64_t config_hash, std::uint64_t seed) {
  return "# nss " + std::string(kVersion) + " seed=" + std::to_string(seed) +
         " config=" + to_hex16(config_hash);
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw validation_error("cannot write file: " + path.string());
  out << content;
  if (!out) throw validation_error("short write: " + path.string());
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw validation_error("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw validation_error("bad number '" + s + "' in " + context);
  }
}

inline long long parse_int(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw validation_error("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw validation_error("bad integer '" + s + "' in " + context);
  }
}

}  // namespace nss
