#ifndef BRACE_HEXFLOAT_HPP_
#define BRACE_HEXFLOAT_HPP_

#include <cstdio>
#include <cstdlib>
#include <string>

#include "brace/error.hpp"

namespace brace {

// Exact round-trip text for doubles (C99 hex-float notation).
inline std::string hex_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw Error(ErrorCode::kCheckpointFormat, "malformed number '" + s + "'");
  }
  return v;
}

}  // namespace brace

#endif  // BRACE_HEXFLOAT_HPP_
