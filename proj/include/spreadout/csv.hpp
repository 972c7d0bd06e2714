#pragma once

#include <cstdio>
#include <string>

namespace spreadout {

/// Shortest round-trippable decimal form of `v`, locale independent.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace spreadout
