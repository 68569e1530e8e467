#pragma once

#include <charconv>
#include <string>

namespace fsalloc {

/// Shortest decimal text that round-trips to the same double.
inline std::string shortest(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

}  // namespace fsalloc
