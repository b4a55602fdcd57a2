#pragma once

#include <charconv>
#include <string>

namespace gnmt {

// Locale-independent fixed-point formatting (CSV cells, logs).
inline std::string format_double(double v, int precision = 6) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, precision);
  return std::string(buf, res.ptr);
}

}  // namespace gnmt
