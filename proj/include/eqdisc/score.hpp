#pragma once

// Accuracy-complexity scoring: NMSE, effective parameter count, sensitivity
// and curvature penalties, and their weighted combination. The sensitivity /
// curvature normalization (divide by std(y), cap non-finite contributions at
// 1e6) is engine policy; reports surface the breakdown so it stays auditable.

#include "eqdisc/common.hpp"
#include "eqdisc/expr.hpp"
#include "eqdisc/fit.hpp"

#include <cmath>
#include <optional>
#include <utility>

namespace eqdisc {

// Mean squared error over population variance of y. +inf when any prediction
// is non-finite.
inline double nmse(const Eigen::ArrayXd& pred, const Eigen::VectorXd& y) {
  if (pred.size() != y.size()) throw DataError("nmse: length mismatch");
  const double var = population_variance(y);
  if (var <= 0.0) throw DataError("degenerate target: Var(y) = 0");
  if (!pred.allFinite()) return kInf;
  const double mse = (pred - y.array()).square().mean();
  return mse / var;
}

// Number of parameters whose perturbation by max(1e-6, 1e-3|theta_i|) moves
// the prediction vector by more than 1e-10 in max-norm relative to std(y).
inline int effective_param_count(const Skeleton& s, const Eigen::VectorXd& theta,
                                 const Frame& data, const Eigen::VectorXd& y) {
  const double sd = population_stddev(y);
  if (sd <= 0.0) throw DataError("degenerate target: Var(y) = 0");
  const Eigen::ArrayXd base = evaluate(s, theta, data);
  int active = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double delta = std::max(1e-6, 1e-3 * std::abs(theta[i]));
    Eigen::VectorXd t = theta;
    t[i] += delta;
    const Eigen::ArrayXd moved = evaluate(s, t, data);
    const double change = (moved - base).abs().maxCoeff() / sd;
    if (!(change <= 1e-10)) ++active;  // non-finite change counts as active
  }
  return active;
}

// Sensitivity (first differences w.r.t. parameters) and curvature (second
// differences w.r.t. the skeleton's input variables), both scaled by std(y),
// on the first min(N, 300) rows. Non-finite contributions are capped at 1e6.
inline std::pair<double, double> behavior_penalties(const Skeleton& s,
                                                    const Eigen::VectorXd& theta,
                                                    const Frame& data,
                                                    const Eigen::VectorXd& y) {
  const double sd = population_stddev(y);
  if (sd <= 0.0) throw DataError("degenerate target: Var(y) = 0");
  constexpr double kCap = 1e6;

  const Eigen::Index m = std::min<Eigen::Index>(data.rows(), 300);
  Frame sub;
  sub.columns = data.columns;
  sub.X = data.X.topRows(m);

  double c_sens = 0.0;
  if (theta.size() > 0) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double delta = std::max(1e-6, 1e-3 * std::abs(theta[i]));
      Eigen::VectorXd tp = theta, tm = theta;
      tp[i] += delta;
      tm[i] -= delta;
      const Eigen::ArrayXd fp = evaluate(s, tp, sub);
      const Eigen::ArrayXd fm = evaluate(s, tm, sub);
      for (Eigen::Index r = 0; r < m; ++r) {
        const double contrib = std::abs(fp[r] - fm[r]) / (2.0 * sd);
        total += std::isfinite(contrib) ? contrib : kCap;
      }
    }
    c_sens = total / static_cast<double>(m * theta.size());
  }

  double c_curv = 0.0;
  if (!s.variables.empty()) {
    const Eigen::ArrayXd f0 = evaluate(s, theta, sub);
    double total = 0.0;
    for (const auto& var : s.variables) {
      const int col = sub.column_index(var);
      if (col < 0) throw DataError("missing input column: " + var);
      Eigen::VectorXd column = data.X.col(col);
      const double h = 1e-3 * population_stddev(column);
      Frame up = sub, dn = sub;
      up.X.col(col).array() += h;
      dn.X.col(col).array() -= h;
      const Eigen::ArrayXd fp = evaluate(s, theta, up);
      const Eigen::ArrayXd fm = evaluate(s, theta, dn);
      for (Eigen::Index r = 0; r < m; ++r) {
        const double contrib = std::abs(fp[r] - 2.0 * f0[r] + fm[r]) / sd;
        total += std::isfinite(contrib) ? contrib : kCap;
      }
    }
    c_curv = total / static_cast<double>(m * static_cast<Eigen::Index>(s.variables.size()));
  }
  return {c_sens, c_curv};
}

// C = n_eff + 0.05 * c_sens + 0.01 * ln(1 + c_curv).
inline double complexity(int n_eff, double c_sens, double c_curv) {
  return 1.0 * n_eff + 0.05 * c_sens + 0.01 * std::log1p(c_curv);
}

// Score = 0.7 * (-ln(nmse + 1e-12)) - 0.3 * C; -inf sentinel for failed fits.
inline double score(double nmse_value, double complexity_value) {
  if (!std::isfinite(nmse_value)) return -kInf;
  return 0.7 * (-std::log(nmse_value + 1e-12)) - 0.3 * complexity_value;
}

struct ComplexityBreakdown {
  int n_eff = 0;
  double c_sens = 0.0;
  double c_curv = 0.0;
};

struct ScoredCandidate {
  Skeleton skeleton;
  FitResult fit;
  ComplexityBreakdown complexity;
  double score = -kInf;
};

// Fit + score pipeline for one candidate. Nullopt when the fit fails or any
// training prediction is non-finite; such candidates carry the -inf score
// sentinel and are never stored.
inline std::optional<ScoredCandidate> evaluate_candidate(const Skeleton& s,
                                                         const Frame& data,
                                                         const Eigen::VectorXd& y,
                                                         const FitOptions& opts = {}) {
  auto fit = mixed_optimize(s, data, y, opts);
  if (!fit) return std::nullopt;
  const Eigen::ArrayXd pred = evaluate(s, fit->theta, data);
  if (!pred.allFinite()) return std::nullopt;

  ScoredCandidate c;
  c.skeleton = s;
  c.fit = *fit;
  c.complexity.n_eff = effective_param_count(s, fit->theta, data, y);
  auto [sens, curv] = behavior_penalties(s, fit->theta, data, y);
  c.complexity.c_sens = sens;
  c.complexity.c_curv = curv;
  c.score = score(fit->nmse, complexity(c.complexity.n_eff, sens, curv));
  if (!std::isfinite(c.score)) return std::nullopt;
  return c;
}

}  // namespace eqdisc
