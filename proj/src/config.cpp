#include "opusim/config.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace opusim {

namespace {

std::string format_with(const char* conv, int prec, double v) {
  char fmt[16];
  std::snprintf(fmt, sizeof(fmt), "%%.%d%s", prec, conv);
  const int n = std::snprintf(nullptr, 0, fmt, v);
  std::vector<char> buf(std::size_t(n) + 1);
  std::snprintf(buf.data(), buf.size(), fmt, v);
  return std::string(buf.data());
}

}  // namespace

std::string format_double(double v, int prec) {
  return format_with("f", prec, v);
}

std::string format_sci(double v, int prec) {
  return format_with("e", prec, v);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

}  // namespace opusim
