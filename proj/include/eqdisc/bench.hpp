#pragma once

// Benchmarking: CSV ingestion with cell-level diagnostics, tolerance-accuracy
// metrics, synthetic dataset generators for the four built-in systems, and
// per-split metric reports. The generators pin concrete constants and
// sampling boxes; those are engine policy, documented next to each system.

#include "eqdisc/common.hpp"
#include "eqdisc/expr.hpp"
#include "eqdisc/score.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace eqdisc {

// Relative-error floor in the accuracy denominator; surfaced in every report.
inline constexpr double kAccEpsilon = 1e-9;

// Fraction of points with |pred - y| / (|y| + eps) <= tau. Non-finite
// predictions count as misses.
inline double acc_at_tau(const Eigen::ArrayXd& pred, const Eigen::VectorXd& y, double tau) {
  if (pred.size() != y.size()) throw DataError("acc_at_tau: length mismatch");
  if (y.size() == 0) return 0.0;
  long hits = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(pred[i])) continue;
    const double rel = std::abs(pred[i] - y[i]) / (std::abs(y[i]) + kAccEpsilon);
    if (rel <= tau) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

// 1 iff every point of the split passes the tolerance; equivalently,
// acc_at_tau == 1 on the same inputs.
inline int acc_max_at_tau(const Eigen::ArrayXd& pred, const Eigen::VectorXd& y, double tau) {
  if (pred.size() != y.size()) throw DataError("acc_max_at_tau: length mismatch");
  if (y.size() == 0) return 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(pred[i])) return 0;
    const double rel = std::abs(pred[i] - y[i]) / (std::abs(y[i]) + kAccEpsilon);
    if (rel > tau) return 0;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim_copy(cell));
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

inline double parse_cell(const std::string& cell, long row, const std::string& column) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw DataError("row " + std::to_string(row) + ", column " + column + ": cannot parse \"" +
                    cell + "\" as a number");
  return v;
}

}  // namespace detail

// Reads one CSV split: header row, numeric cells, the named target column
// separated out, row order preserved. Diagnostics name the 1-based data row
// and the column.
inline SplitBlock load_csv(std::istream& in, const std::string& target) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: no header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split_csv_line(line);
  if (header.empty()) throw DataError("empty header row");

  int target_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == target) target_col = static_cast<int>(i);
  if (target_col < 0) throw DataError("target column \"" + target + "\" not found in header");

  std::vector<std::vector<double>> rows;
  long row_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim_copy(line).empty()) continue;
    ++row_no;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      vals[c] = detail::parse_cell(cells[c], row_no, header[c]);
    rows.push_back(std::move(vals));
  }

  SplitBlock block;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (static_cast<int>(i) != target_col) block.inputs.columns.push_back(header[i]);
  block.inputs.X.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(header.size()) - 1);
  block.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Eigen::Index k = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (static_cast<int>(c) == target_col)
        block.y[static_cast<Eigen::Index>(r)] = rows[r][c];
      else
        block.inputs.X(static_cast<Eigen::Index>(r), k++) = rows[r][c];
    }
  }
  return block;
}

inline SplitBlock load_csv(const std::string& path, const std::string& target) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  return load_csv(in, target);
}

// Values are written with round-trip precision so a load_csv of the output
// reproduces the doubles bit for bit.
inline void write_csv(std::ostream& out, const SplitBlock& block, const std::string& target) {
  for (std::size_t i = 0; i < block.inputs.columns.size(); ++i)
    out << block.inputs.columns[i] << ",";
  out << target << "\n";
  for (Eigen::Index r = 0; r < block.inputs.X.rows(); ++r) {
    for (Eigen::Index c = 0; c < block.inputs.X.cols(); ++c)
      out << format_double(block.inputs.X(r, c)) << ",";
    out << format_double(block.y[r]) << "\n";
  }
}

inline void write_csv(const std::string& path, const SplitBlock& block, const std::string& target) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  write_csv(out, block, target);
}

// ---------------------------------------------------------------------------
// Datasets and synthetic systems

struct Dataset {
  std::vector<std::string> columns;  // input columns, shared by all splits
  std::string target = "y";
  SplitBlock train;
  SplitBlock id_test;
  SplitBlock ood_test;
};

// Ground-truth form of a built-in system, parameters factored out so the same
// string can seed a replay script or a fit.
struct SyntheticTruth {
  std::string name;
  std::vector<std::string> columns;
  std::string skeleton;
  Eigen::VectorXd theta;
};

namespace detail {

struct SystemDef {
  SyntheticTruth truth;
  std::vector<std::pair<double, double>> id_box;   // per input column
  std::vector<std::pair<double, double>> ood_box;  // strictly contains id_box
};

// Built-in systems. Forms follow the benchmark equations; the constants and
// sampling boxes are fixed engine policy so runs are comparable:
//   oscillator1:   F=0.8, w=1.2, alpha=0.5, beta=0.3, gamma=0.2
//   oscillator2:   F=0.6, w=1.1, alpha=0.4, beta=0.25, delta=0.7, gamma=0.5
//   bactgrow:      mu_max=1.2, K_S=2, k=1, x0=2, c=0.05, x_decay=3,
//                  pH_opt=7, pH_min=4, pH_range=6
//   stress_strain: A=0.2, B=1.5, n=0.6, T_r=20, T_m-T_r=480, m=1.8
inline const std::vector<SystemDef>& system_defs() {
  static const std::vector<SystemDef> defs = [] {
    std::vector<SystemDef> v;
    {
      SystemDef d;
      d.truth.name = "oscillator1";
      d.truth.columns = {"x", "v"};
      d.truth.skeleton =
          "params[0]*sin(params[1]*x) - params[2]*v^3 - params[3]*x^3 - params[4]*x*v - x*cos(x)";
      d.truth.theta = Eigen::VectorXd(5);
      d.truth.theta << 0.8, 1.2, 0.5, 0.3, 0.2;
      d.id_box = {{-2.0, 2.0}, {-2.0, 2.0}};
      d.ood_box = {{-4.0, 4.0}, {-4.0, 4.0}};
      v.push_back(std::move(d));
    }
    {
      SystemDef d;
      d.truth.name = "oscillator2";
      d.truth.columns = {"t", "x", "v"};
      d.truth.skeleton =
          "params[0]*sin(params[1]*t) - params[2]*v^3 - params[3]*x*v - "
          "params[4]*x*exp(params[5]*x)";
      d.truth.theta = Eigen::VectorXd(6);
      d.truth.theta << 0.6, 1.1, 0.4, 0.25, 0.7, 0.5;
      d.id_box = {{0.0, 4.0}, {-2.0, 2.0}, {-2.0, 2.0}};
      d.ood_box = {{0.0, 8.0}, {-4.0, 4.0}, {-4.0, 4.0}};
      v.push_back(std::move(d));
    }
    {
      SystemDef d;
      d.truth.name = "bactgrow";
      d.truth.columns = {"B", "S", "T", "pH"};
      d.truth.skeleton =
          "params[0]*B*(S/(params[1]+S))*(tanh(params[2]*(T-params[3]))/"
          "(1+params[4]*(T-params[5])^4))*exp(-abs(pH-params[6]))*"
          "sin(((pH-params[7])/params[8]*3.141592653589793)^2)";
      d.truth.theta = Eigen::VectorXd(9);
      d.truth.theta << 1.2, 2.0, 1.0, 2.0, 0.05, 3.0, 7.0, 4.0, 6.0;
      d.id_box = {{0.1, 2.0}, {0.1, 4.0}, {0.5, 5.0}, {4.5, 9.5}};
      d.ood_box = {{0.05, 3.0}, {0.05, 8.0}, {0.0, 7.0}, {4.05, 9.95}};
      v.push_back(std::move(d));
    }
    {
      SystemDef d;
      d.truth.name = "stress_strain";
      d.truth.columns = {"eps", "T"};
      d.truth.skeleton =
          "(params[0]+params[1]*eps^params[2])*(1-((T-params[3])/params[4])^params[5])";
      d.truth.theta = Eigen::VectorXd(6);
      d.truth.theta << 0.2, 1.5, 0.6, 20.0, 480.0, 1.8;
      d.id_box = {{0.02, 0.8}, {25.0, 400.0}};
      d.ood_box = {{0.01, 1.2}, {22.0, 480.0}};
      v.push_back(std::move(d));
    }
    return v;
  }();
  return defs;
}

inline const SystemDef& find_system(const std::string& name) {
  for (const SystemDef& d : system_defs())
    if (d.truth.name == name) return d;
  std::string known;
  for (const SystemDef& d : system_defs()) known += (known.empty() ? "" : ", ") + d.truth.name;
  throw DataError("unknown synthetic system \"" + name + "\" (known: " + known + ")");
}

inline bool inside_box(const Eigen::RowVectorXd& row,
                       const std::vector<std::pair<double, double>>& box) {
  for (Eigen::Index c = 0; c < row.size(); ++c)
    if (row[c] < box[static_cast<std::size_t>(c)].first ||
        row[c] > box[static_cast<std::size_t>(c)].second)
      return false;
  return true;
}

}  // namespace detail

inline std::vector<std::string> synthetic_names() {
  std::vector<std::string> names;
  for (const auto& d : detail::system_defs()) names.push_back(d.truth.name);
  return names;
}

inline SyntheticTruth synthetic_truth(const std::string& name) {
  return detail::find_system(name).truth;
}

// Generates one benchmark dataset. ID splits sample the ID box uniformly; OOD
// rows sample the extended box with rejection of anything inside the ID box.
// Gaussian noise (absolute sigma) is applied to the train target only, so the
// test splits measure the recovered equation, not the noise realization.
// Deterministic given the seed.
inline Dataset make_synthetic(const std::string& name, int n_train = 500, int n_id = 200,
                              int n_ood = 200, double noise = 0.0, uint64_t seed = 0) {
  if (n_train < 0 || n_id < 0 || n_ood < 0) throw DataError("negative split size");
  const detail::SystemDef& def = detail::find_system(name);
  const int cols = static_cast<int>(def.truth.columns.size());
  const Skeleton truth = parse(def.truth.skeleton);

  std::mt19937_64 rng(seed);
  auto sample_box = [&](const std::vector<std::pair<double, double>>& box, int n) {
    Eigen::MatrixXd X(n, cols);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < cols; ++c) {
        std::uniform_real_distribution<double> u(box[static_cast<std::size_t>(c)].first,
                                                 box[static_cast<std::size_t>(c)].second);
        X(r, c) = u(rng);
      }
    return X;
  };

  Dataset ds;
  ds.columns = def.truth.columns;

  auto build_split = [&](Eigen::MatrixXd X) {
    SplitBlock b;
    b.inputs.columns = def.truth.columns;
    b.inputs.X = std::move(X);
    b.y = evaluate(truth, def.truth.theta, b.inputs).matrix();
    return b;
  };

  ds.train = build_split(sample_box(def.id_box, n_train));
  ds.id_test = build_split(sample_box(def.id_box, n_id));

  Eigen::MatrixXd ood(n_ood, cols);
  {
    long guard = 0;
    for (int r = 0; r < n_ood; ++r) {
      while (true) {
        if (++guard > 1000L * std::max(1, n_ood))
          throw DataError("OOD rejection sampling failed to converge");
        const Eigen::MatrixXd probe = sample_box(def.ood_box, 1);
        if (!detail::inside_box(probe.row(0), def.id_box)) {
          ood.row(r) = probe.row(0);
          break;
        }
      }
    }
  }
  ds.ood_test = build_split(std::move(ood));

  if (noise > 0.0 && n_train > 0) {
    std::normal_distribution<double> g(0.0, noise);
    for (Eigen::Index i = 0; i < ds.train.y.size(); ++i) ds.train.y[i] += g(rng);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Metrics

struct SplitMetrics {
  long rows = 0;
  double nmse = kNaN;
  double acc_01 = kNaN;       // ACC at tau = 0.1
  double acc_001 = kNaN;      // ACC at tau = 0.001
  int acc_max_01 = 0;
  int acc_max_001 = 0;
};

struct MetricsReport {
  double epsilon = kAccEpsilon;
  SplitMetrics train;
  SplitMetrics id_test;
  SplitMetrics ood_test;
};

namespace detail {

inline SplitMetrics split_metrics(const Skeleton& s, const Eigen::VectorXd& theta,
                                  const SplitBlock& block) {
  SplitMetrics m;
  m.rows = block.y.size();
  if (m.rows == 0) return m;
  const Eigen::ArrayXd pred = evaluate(s, theta, block.inputs);
  const double var = population_variance(block.y);
  if (!pred.allFinite()) {
    m.nmse = kInf;
  } else if (var > 0.0) {
    m.nmse = (pred - block.y.array()).square().mean() / var;
  } else {
    m.nmse = kInf;  // degenerate split variance
  }
  m.acc_01 = acc_at_tau(pred, block.y, 0.1);
  m.acc_001 = acc_at_tau(pred, block.y, 0.001);
  m.acc_max_01 = acc_max_at_tau(pred, block.y, 0.1);
  m.acc_max_001 = acc_max_at_tau(pred, block.y, 0.001);
  return m;
}

inline nlohmann::json split_metrics_json(const SplitMetrics& m) {
  nlohmann::json j;
  j["rows"] = m.rows;
  j["nmse"] = std::isfinite(m.nmse) ? nlohmann::json(m.nmse) : nlohmann::json();
  j["acc_0.1"] = std::isfinite(m.acc_01) ? nlohmann::json(m.acc_01) : nlohmann::json();
  j["acc_0.001"] = std::isfinite(m.acc_001) ? nlohmann::json(m.acc_001) : nlohmann::json();
  j["acc_max_0.1"] = m.acc_max_01;
  j["acc_max_0.001"] = m.acc_max_001;
  return j;
}

}  // namespace detail

// Tolerance-accuracy metrics for one equation over all three splits. Empty splits keep
// NaN sentinels (serialized as nulls); non-finite predictions force NMSE to
// +inf and count as accuracy misses.
inline MetricsReport evaluate_equation(const Skeleton& s, const Eigen::VectorXd& theta,
                                       const Dataset& ds) {
  MetricsReport r;
  r.train = detail::split_metrics(s, theta, ds.train);
  r.id_test = detail::split_metrics(s, theta, ds.id_test);
  r.ood_test = detail::split_metrics(s, theta, ds.ood_test);
  return r;
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
  nlohmann::json j;
  j["epsilon"] = r.epsilon;
  j["train"] = detail::split_metrics_json(r.train);
  j["id_test"] = detail::split_metrics_json(r.id_test);
  j["ood_test"] = detail::split_metrics_json(r.ood_test);
  return j;
}

// Fixed-width human-readable table, one row per nonempty split.
inline std::string metrics_table(const MetricsReport& r) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-10s %8s %12s %10s %10s %8s %8s\n", "split", "rows", "nmse",
                "acc@0.1", "acc@1e-3", "max@0.1", "max@1e-3");
  out << buf;
  auto row = [&](const char* name, const SplitMetrics& m) {
    if (m.rows == 0) return;
    std::snprintf(buf, sizeof(buf), "%-10s %8ld %12.4e %10.4f %10.4f %8d %8d\n", name, m.rows,
                  m.nmse, m.acc_01, m.acc_001, m.acc_max_01, m.acc_max_001);
    out << buf;
  };
  row("train", r.train);
  row("id_test", r.id_test);
  row("ood_test", r.ood_test);
  return out.str();
}

}  // namespace eqdisc
