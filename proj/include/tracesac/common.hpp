// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tracesac {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (CSV rows, checkpoint files, snapshots).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A domain invariant was violated (bid > ask, non-finite value, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Timestamps out of order or with gaps in the minute grid.
class OrderingError : public Error {
 public:
  using Error::Error;
};

/// Dataset length does not match the requested environment layout.
class LengthMismatchError : public Error {
 public:
  using Error::Error;
};

/// Replay buffer sampled before reaching its warmup size.
class NotReadyError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
  bool empty() const noexcept { return end <= begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Deterministic random source.
///
/// std::mt19937_64 output is fully specified by the standard; the
/// distribution objects of the standard library are not, so uniform and
/// normal variates are derived here by hand to keep streams identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % bound);
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Shortest text that round-trips a double exactly.
inline std::string format_exact(double value) {
  std::ostringstream out;
  out.precision(std::numeric_limits<double>::max_digits10);
  out << value;
  return out.str();
}

/// Fixed-point text with the given number of decimals.
inline std::string format_fixed(double value, int decimals) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(decimals);
  out << value;
  return out.str();
}

/// Splits a line on commas. No quoting support; the formats used here
/// are purely numeric.
inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Parses a finite double; throws ParseError on failure.
inline double parse_double(std::string_view text, std::size_t line, std::string_view column) {
  const std::string buf(trim(text));
  if (buf.empty()) throw ParseError(line, "empty value in column '" + std::string(column) + "'");
  std::size_t consumed = 0;
  double value = 0.0;
  try {
    value = std::stod(buf, &consumed);
  } catch (const std::exception&) {
    throw ParseError(line, "cannot parse '" + buf + "' in column '" + std::string(column) + "'");
  }
  if (consumed != buf.size()) {
    throw ParseError(line, "trailing characters in '" + buf + "' (column '" + std::string(column) + "')");
  }
  if (!std::isfinite(value)) {
    throw ParseError(line, "non-finite value in column '" + std::string(column) + "'");
  }
  return value;
}

inline std::int64_t parse_int(std::string_view text, std::size_t line, std::string_view column) {
  const std::string buf(trim(text));
  std::size_t consumed = 0;
  long long value = 0;
  try {
    value = std::stoll(buf, &consumed);
  } catch (const std::exception&) {
    throw ParseError(line, "cannot parse integer '" + buf + "' in column '" + std::string(column) + "'");
  }
  if (consumed != buf.size() || buf.empty()) {
    throw ParseError(line, "cannot parse integer '" + buf + "' in column '" + std::string(column) + "'");
  }
  return static_cast<std::int64_t>(value);
}

}  // namespace tracesac
