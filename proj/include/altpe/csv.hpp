#pragma once

#include <cstdio>
#include <string>

namespace altpe {

/// Round-trippable decimal text for a double (17 significant digits, '.' separator).
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace altpe
