#pragma once

#include <charconv>
#include <stdexcept>
#include <string>

namespace splitrl {

/// Shortest decimal text that round-trips to the same double.
inline std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  if (res.ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf, res.ptr);
}

}  // namespace splitrl
