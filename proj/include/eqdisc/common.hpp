#pragma once

// Shared basic types: tabular data views, error hierarchy, numeric helpers.

#include <Eigen/Dense>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace eqdisc {

// Raised when an expression string violates the grammar.
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Raised on malformed tabular input (CSV, dumps) or contract violations on data.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a generation backend cannot produce a response.
class ProviderError : public std::runtime_error {
public:
  explicit ProviderError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a scripted replay file runs out of records mid-run.
class ReplayExhausted : public ProviderError {
public:
  explicit ReplayExhausted(const std::string& what) : ProviderError(what) {}
};

// Column-labelled numeric table. X is rows x columns, columns[i] labels X.col(i).
struct Frame {
  std::vector<std::string> columns;
  Eigen::MatrixXd X;

  Eigen::Index rows() const { return X.rows(); }

  // Index of a named column, -1 if absent.
  int column_index(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }
};

// One data split: inputs plus the target vector extracted from the same table.
struct SplitBlock {
  Frame inputs;
  Eigen::VectorXd y;
};

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Population variance (divides by N, not N-1).
inline double population_variance(const Eigen::VectorXd& y) {
  if (y.size() == 0) return 0.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size());
}

inline double population_stddev(const Eigen::VectorXd& y) {
  return std::sqrt(population_variance(y));
}

// Shortest decimal rendering that round-trips through strtod.
inline std::string format_double(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

namespace detail {

// Copy with ASCII whitespace stripped from both ends.
inline std::string trim_copy(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

// SplitMix64 step; used to derive independent child seeds from one root seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace eqdisc
