#include "mvoc/util.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <system_error>

namespace mvoc {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

std::vector<unsigned char> read_binary_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  return buf;
}

void atomic_write_file(const fs::path& p, const void* data, std::size_t n) {
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw std::runtime_error("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw std::runtime_error("rename " + tmp.string() + " -> " + p.string() + ": " + ec.message());
}

void atomic_write_file(const fs::path& p, const std::string& text) {
  atomic_write_file(p, text.data(), text.size());
}

void append_line(const fs::path& p, const std::string& line) {
  std::ofstream f(p, std::ios::binary | std::ios::app);
  if (!f) throw std::runtime_error("cannot append to " + p.string());
  f << line << '\n';
}

std::uint64_t hash_file(const fs::path& p) {
  auto buf = read_binary_file(p);
  return fnv1a(buf.data(), buf.size());
}

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace mvoc
