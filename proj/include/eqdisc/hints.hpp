#pragma once

// Lightweight data analysis for prompt construction: per-column statistics,
// target bias tendency, per-variable parity detection via mirrored-row
// matching, and dominant terms of a ridge fit over a small expanded feature
// basis. Everything here is deterministic in the input data; no RNG.

#include "eqdisc/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace eqdisc {

enum class Parity { None, Odd, Even };

struct ParityTag {
  Parity parity = Parity::None;
  double confidence = 0.0;  // fraction of matched pairs passing the per-pair test
  int pairs = 0;            // mirrored pairs found for this variable
};

struct ColumnStats {
  std::string name;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct DominantTerm {
  std::string description;  // e.g. "x^3", "sin(x)", "x1*x2"
  double weight = 0.0;      // |ridge coefficient| on standardized features
};

// Summary handed to the proposal prompt. stats_only hints (too few rows or a
// constant target) carry no parity tags and no dominant terms.
struct DataHint {
  std::vector<ColumnStats> variables;
  ColumnStats target;
  double bias_ratio = 0.0;  // mean(y) / std(y), 0 when the target is constant
  std::vector<ParityTag> parity;        // aligned with variables
  std::vector<DominantTerm> dominant_terms;  // sorted descending by weight
  bool stats_only = false;
  std::string note;  // set when the hint is degraded (e.g. constant target)
};

namespace detail {

inline ColumnStats column_stats(const std::string& name, const Eigen::VectorXd& col) {
  ColumnStats st;
  st.name = name;
  st.mean = col.size() > 0 ? col.mean() : 0.0;
  st.stddev = population_stddev(col);
  st.min = col.size() > 0 ? col.minCoeff() : 0.0;
  st.max = col.size() > 0 ? col.maxCoeff() : 0.0;
  return st;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Parity of y in column `vi`, tested against mirrored rows: a partner row must
// negate column vi within 1e-6 and match every other input column within
// 0.05 * that column's std. The scan is quadratic, so it looks at the first
// `max_rows` rows only; hint extraction runs once per dataset.
inline ParityTag parity_for_column(const Frame& inputs, const Eigen::VectorXd& y,
                                   int vi, double y_std, int max_rows = 2000) {
  const int n = static_cast<int>(std::min<Eigen::Index>(inputs.rows(), max_rows));
  const int cols = static_cast<int>(inputs.X.cols());
  std::vector<double> tol(cols);
  for (int c = 0; c < cols; ++c)
    tol[c] = 0.05 * population_stddev(inputs.X.col(c).head(n));

  std::vector<double> odd_vals, even_vals;
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double best_dist = kInf;
    for (int j = 0; j < n; ++j) {
      const double mirror_err = std::abs(inputs.X(j, vi) + inputs.X(i, vi));
      if (mirror_err > 1e-6) continue;
      double dist = mirror_err;
      bool ok = true;
      for (int c = 0; c < cols && ok; ++c) {
        if (c == vi) continue;
        const double d = std::abs(inputs.X(j, c) - inputs.X(i, c));
        if (d > tol[c]) ok = false;
        dist += d;
      }
      if (ok && dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    if (best < 0) continue;
    odd_vals.push_back(std::abs(y[i] + y[best]) / y_std);
    even_vals.push_back(std::abs(y[i] - y[best]) / y_std);
  }

  ParityTag tag;
  tag.pairs = static_cast<int>(odd_vals.size());
  if (tag.pairs < 30) return tag;

  auto pass_fraction = [](const std::vector<double>& vals) {
    int pass = 0;
    for (double v : vals)
      if (v < 0.05) ++pass;
    return static_cast<double>(pass) / static_cast<double>(vals.size());
  };
  if (median_of(odd_vals) < 0.05) {
    tag.parity = Parity::Odd;
    tag.confidence = pass_fraction(odd_vals);
  } else if (median_of(even_vals) < 0.05) {
    tag.parity = Parity::Even;
    tag.confidence = pass_fraction(even_vals);
  }
  return tag;
}

struct FeatureSet {
  std::vector<std::string> descriptions;
  std::vector<int> degrees;  // drop priority when capping: highest degree first
  Eigen::MatrixXd matrix;    // rows x features, raw (unstandardized)
};

// Expanded basis: monomials to degree 3, unary sin/cos/exp/log per variable,
// and pairwise products. Capped at `cap` features by removing highest-degree
// entries from the back of the list, so the retained set is deterministic.
inline FeatureSet expand_features(const Frame& inputs, int cap = 200) {
  const Eigen::Index n = inputs.rows();
  const int cols = static_cast<int>(inputs.X.cols());

  std::vector<std::string> desc;
  std::vector<int> deg;
  std::vector<Eigen::VectorXd> col_data;
  auto add = [&](std::string d, int g, Eigen::VectorXd v) {
    desc.push_back(std::move(d));
    deg.push_back(g);
    col_data.push_back(std::move(v));
  };

  for (int c = 0; c < cols; ++c) {
    const Eigen::ArrayXd x = inputs.X.col(c).array();
    const std::string& nm = inputs.columns[c];
    add(nm, 1, x.matrix());
    add(nm + "^2", 2, (x * x).matrix());
    add(nm + "^3", 3, (x * x * x).matrix());
    add("sin(" + nm + ")", 3, x.sin().matrix());
    add("cos(" + nm + ")", 3, x.cos().matrix());
    add("exp(" + nm + ")", 3, x.min(20.0).max(-20.0).exp().matrix());
    add("log(|" + nm + "|+1)", 3, (x.abs() + 1.0).log().matrix());
  }
  for (int a = 0; a < cols; ++a)
    for (int b = a + 1; b < cols; ++b)
      add(inputs.columns[a] + "*" + inputs.columns[b], 2,
          (inputs.X.col(a).array() * inputs.X.col(b).array()).matrix());

  while (static_cast<int>(desc.size()) > cap) {
    const int worst = *std::max_element(deg.begin(), deg.end());
    for (int i = static_cast<int>(desc.size()) - 1; i >= 0; --i) {
      if (deg[i] == worst) {
        desc.erase(desc.begin() + i);
        deg.erase(deg.begin() + i);
        col_data.erase(col_data.begin() + i);
        break;
      }
    }
  }

  FeatureSet fs;
  fs.descriptions = std::move(desc);
  fs.degrees = std::move(deg);
  fs.matrix.resize(n, static_cast<Eigen::Index>(fs.descriptions.size()));
  for (Eigen::Index j = 0; j < fs.matrix.cols(); ++j) fs.matrix.col(j) = col_data[j];
  return fs;
}

// Ridge fit (lambda = 1e-6) of standardized y on standardized features;
// constant features are excluded. Returns terms sorted descending by
// |coefficient|, truncated to `top`.
inline std::vector<DominantTerm> dominant_terms(const Frame& inputs, const Eigen::VectorXd& y,
                                                int top = 8, double lambda = 1e-6) {
  const FeatureSet fs = expand_features(inputs);
  const Eigen::Index n = y.size();
  const double y_mean = y.mean();
  const double y_std = population_stddev(y);
  if (y_std <= 0.0) return {};
  const Eigen::VectorXd ys = (y.array() - y_mean) / y_std;

  std::vector<int> keep;
  std::vector<double> mu, sd;
  for (Eigen::Index j = 0; j < fs.matrix.cols(); ++j) {
    const double m = fs.matrix.col(j).mean();
    const double s = population_stddev(fs.matrix.col(j));
    if (s > 1e-12 && std::isfinite(m) && std::isfinite(s)) {
      keep.push_back(static_cast<int>(j));
      mu.push_back(m);
      sd.push_back(s);
    }
  }
  if (keep.empty()) return {};

  Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k)
    Z.col(static_cast<Eigen::Index>(k)) = (fs.matrix.col(keep[k]).array() - mu[k]) / sd[k];

  Eigen::MatrixXd A = Z.transpose() * Z;
  A.diagonal().array() += lambda;
  const Eigen::VectorXd beta = A.ldlt().solve(Z.transpose() * ys);

  std::vector<DominantTerm> terms(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    terms[k].description = fs.descriptions[keep[k]];
    terms[k].weight = std::abs(beta[static_cast<Eigen::Index>(k)]);
  }
  std::stable_sort(terms.begin(), terms.end(),
                   [](const DominantTerm& a, const DominantTerm& b) { return a.weight > b.weight; });
  if (static_cast<int>(terms.size()) > top) terms.resize(top);
  return terms;
}

}  // namespace detail

// Builds the hint for one training block. Fewer than 20 rows or a constant
// target degrade to a stats-only hint (parity and dominant terms need a
// meaningful spread in y).
inline DataHint build_data_hint(const Frame& inputs, const Eigen::VectorXd& y) {
  if (inputs.rows() != y.size()) throw DataError("build_data_hint: row count mismatch");
  DataHint h;
  for (Eigen::Index c = 0; c < inputs.X.cols(); ++c)
    h.variables.push_back(detail::column_stats(inputs.columns[c], inputs.X.col(c)));
  h.target = detail::column_stats("y", y);
  h.bias_ratio = h.target.stddev > 0.0 ? h.target.mean / h.target.stddev : 0.0;

  if (h.target.stddev <= 0.0) {
    h.stats_only = true;
    h.note = "constant target; symmetry and dominant-term analysis skipped";
    return h;
  }
  if (y.size() < 20) {
    h.stats_only = true;
    h.note = "fewer than 20 rows; symmetry and dominant-term analysis skipped";
    return h;
  }

  for (Eigen::Index c = 0; c < inputs.X.cols(); ++c)
    h.parity.push_back(detail::parity_for_column(inputs, y, static_cast<int>(c), h.target.stddev));
  h.dominant_terms = detail::dominant_terms(inputs, y);
  return h;
}

inline DataHint build_data_hint(const SplitBlock& block) {
  return build_data_hint(block.inputs, block.y);
}

namespace detail {

inline std::string g4(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline std::string g4s(double v) {  // with explicit sign
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%+.4g", v);
  return buf;
}

}  // namespace detail

// Renders the hint as a bounded text block (at most 40 lines). Long variable
// lists are elided rather than letting the block grow with the dataset.
inline std::string render_hint(const DataHint& h) {
  constexpr int kMaxVars = 6;
  std::ostringstream out;
  using detail::g4;

  out << "STATS\n";
  if (!h.note.empty()) out << "  note: " << h.note << "\n";
  const int nv = static_cast<int>(h.variables.size());
  const int shown = std::min(nv, kMaxVars);
  for (int i = 0; i < shown; ++i) {
    const ColumnStats& s = h.variables[i];
    out << "  " << s.name << ": mean=" << g4(s.mean) << " std=" << g4(s.stddev)
        << " min=" << g4(s.min) << " max=" << g4(s.max) << "\n";
  }
  if (nv > shown) out << "  (" << (nv - shown) << " more variables)\n";
  out << "  y: mean=" << g4(h.target.mean) << " std=" << g4(h.target.stddev)
      << " min=" << g4(h.target.min) << " max=" << g4(h.target.max) << "\n";
  const char* bias_word = h.bias_ratio > 0.1 ? "positive" : (h.bias_ratio < -0.1 ? "negative" : "neutral");
  out << "  bias: mean/std = " << detail::g4s(h.bias_ratio) << " (" << bias_word << ")\n";

  if (!h.stats_only) {
    int tagged = 0;
    for (const ParityTag& t : h.parity)
      if (t.parity != Parity::None) ++tagged;
    if (tagged > 0) {
      out << "SYMMETRY\n";
      int emitted = 0;
      for (std::size_t i = 0; i < h.parity.size() && emitted < kMaxVars; ++i) {
        const ParityTag& t = h.parity[i];
        if (t.parity == Parity::None) continue;
        out << "  symmetry: " << (t.parity == Parity::Odd ? "odd" : "even") << " in "
            << h.variables[i].name << " (confidence " << g4(t.confidence) << ")\n";
        ++emitted;
      }
      if (tagged > emitted) out << "  (" << (tagged - emitted) << " more)\n";
    }
    if (!h.dominant_terms.empty()) {
      out << "DOMINANT TERMS\n";
      for (std::size_t i = 0; i < h.dominant_terms.size(); ++i)
        out << "  " << (i + 1) << ". " << h.dominant_terms[i].description << " (weight "
            << g4(h.dominant_terms[i].weight) << ")\n";
    }
  }

  out << "CONSTRAINTS\n";
  for (int i = 0; i < shown; ++i) {
    const ColumnStats& s = h.variables[i];
    out << "  " << s.name << ": range [" << g4(s.min) << ", " << g4(s.max) << "]";
    if (s.min > 0.0)
      out << ", strictly positive";
    else if (s.min >= 0.0)
      out << ", nonnegative";
    out << "\n";
  }
  if (nv > shown) out << "  (" << (nv - shown) << " more variables)\n";
  out << "  y: range [" << g4(h.target.min) << ", " << g4(h.target.max) << "]";
  if (h.target.min > 0.0)
    out << ", strictly positive";
  else if (h.target.min >= 0.0)
    out << ", nonnegative";
  out << "\n";
  return out.str();
}

}  // namespace eqdisc
