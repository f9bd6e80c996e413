#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <system_error>
#include <type_traits>
#include <vector>

#include "osclab/errors.hpp"

namespace osclab {

/// Shortest round-trip decimal form of a double. Locale-free and
/// platform-stable, which is what keeps repeated runs byte-identical.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw NumericError("format_double: value does not fit buffer");
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string csv_field(const std::string& s) { return s; }
inline std::string csv_field(const char* s) { return s; }
inline std::string csv_field(double v) { return format_double(v); }
inline std::string csv_field(float v) { return format_double(v); }

template <typename T>
  requires std::is_integral_v<T>
inline std::string csv_field(T v) {
  return std::to_string(v);
}

}  // namespace detail

/// Line-buffered CSV emitter with a fixed header written up front.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : out_(path) {
    if (!out_) throw FormatError("csv: cannot open '" + path + "' for writing");
    out_ << header << '\n';
  }

  template <typename... Fields>
  void row(const Fields&... fields) {
    std::string line;
    std::size_t i = 0;
    ((line += detail::csv_field(fields), line += (++i < sizeof...(fields) ? "," : "")), ...);
    out_ << line << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

}  // namespace osclab
