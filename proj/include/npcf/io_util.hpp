#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>

#include "npcf/errors.hpp"

namespace npcf {

// Shortest decimal form that parses back to the exact same double. Keeps text
// artifacts bit-stable across runs and round-trip exact.
inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw SchemaError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline long parse_long(std::string_view s) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw SchemaError("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw SchemaError("not an unsigned integer: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace npcf
