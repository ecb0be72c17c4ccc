#pragma once

// Separable parameter fitting: ridge least squares over linear coefficients
// nested inside a derivative-free Powell search over nonlinear parameters,
// with a multi-start quasi-Newton fallback over all parameters jointly. The
// final result is whichever path reaches the lower NMSE.

#include "eqdisc/common.hpp"
#include "eqdisc/expr.hpp"

#include <algorithm>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace eqdisc {

enum class FitPath { Mixed, Fallback };

struct FitResult {
  Eigen::VectorXd theta;
  double nmse = kInf;
  FitPath path = FitPath::Mixed;
  long evals = 0;  // objective evaluations across both paths
};

struct FitOptions {
  int n_starts = 4;
  double ridge_lambda = 1e-10;
  uint64_t seed = 0;
  int powell_evals_per_dim = 200;  // per start
  double powell_rel_tol = 1e-12;
  int bfgs_max_iters = 100;
  long max_total_evals = 0;  // 0 = uncapped; screening fits set a cap
  bool warn_underdetermined = true;
};

struct ProbeSystem {
  Eigen::VectorXd bias;     // b(q): all linear coefficients at zero
  Eigen::MatrixXd design;   // column k: unit activation of linear param k, minus b
};

namespace detail {

struct RoleMaps {
  std::vector<int> linear;     // param index of each linear slot
  std::vector<int> nonlinear;  // param index of each nonlinear slot
};

inline RoleMaps role_maps(const std::vector<ParamRole>& roles) {
  RoleMaps m;
  for (size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == ParamRole::Linear) m.linear.push_back(static_cast<int>(i));
    else m.nonlinear.push_back(static_cast<int>(i));
  }
  return m;
}

inline Eigen::VectorXd assemble_theta(const RoleMaps& m, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& q) {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(m.linear.size() + m.nonlinear.size()));
  for (size_t k = 0; k < m.linear.size(); ++k) theta[m.linear[k]] = w[static_cast<Eigen::Index>(k)];
  for (size_t k = 0; k < m.nonlinear.size(); ++k) theta[m.nonlinear[k]] = q[static_cast<Eigen::Index>(k)];
  return theta;
}

}  // namespace detail

// Probe construction: bias from all-zero linear coefficients, one design
// column per linear coefficient from its unit activation. Nullopt when any
// entry is non-finite (the optimizer treats that q as infeasible).
inline std::optional<ProbeSystem> build_probe_system(const Skeleton& s,
                                                     const std::vector<ParamRole>& roles,
                                                     const Eigen::VectorXd& q,
                                                     const Frame& data) {
  const detail::RoleMaps m = detail::role_maps(roles);
  if (q.size() != static_cast<Eigen::Index>(m.nonlinear.size()))
    throw DataError("q length does not match nonlinear parameter count");
  const Eigen::Index N = data.rows();
  const Eigen::Index L = static_cast<Eigen::Index>(m.linear.size());

  Eigen::VectorXd w0 = Eigen::VectorXd::Zero(L);
  ProbeSystem ps;
  ps.bias = evaluate(s, detail::assemble_theta(m, w0, q), data).matrix();
  if (!ps.bias.allFinite()) return std::nullopt;

  ps.design.resize(N, L);
  for (Eigen::Index k = 0; k < L; ++k) {
    Eigen::VectorXd wk = Eigen::VectorXd::Zero(L);
    wk[k] = 1.0;
    Eigen::VectorXd col = evaluate(s, detail::assemble_theta(m, wk, q), data).matrix();
    if (!col.allFinite()) return std::nullopt;
    ps.design.col(k) = col - ps.bias;
  }
  return ps;
}

// Ridge least squares |Phi*w - (y-b)|^2 + lambda*|w|^2 via normal equations.
// Nullopt on degenerate systems (non-finite solve or large residual even with
// ridge).
inline std::optional<Eigen::VectorXd> solve_linear(const ProbeSystem& ps,
                                                   const Eigen::VectorXd& y,
                                                   double lambda) {
  if (y.size() != ps.bias.size()) throw DataError("target length does not match probe rows");
  const Eigen::Index L = ps.design.cols();
  if (L == 0) return Eigen::VectorXd(0);
  Eigen::MatrixXd A = ps.design.transpose() * ps.design;
  A.diagonal().array() += lambda;
  const Eigen::VectorXd rhs = ps.design.transpose() * (y - ps.bias);
  if (!A.allFinite() || !rhs.allFinite()) return std::nullopt;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  Eigen::VectorXd w = ldlt.solve(rhs);
  if (!w.allFinite()) return std::nullopt;
  if ((A * w - rhs).norm() > 1e-6 * (rhs.norm() + 1.0)) return std::nullopt;
  return w;
}

namespace detail {

// Reduced objective context: J(q) after the inner ridge solve, normalized by
// N * Var(y). Non-finite anywhere maps to +inf.
struct ReducedContext {
  const Skeleton& s;
  const std::vector<ParamRole>& roles;
  const RoleMaps maps;
  const Frame& data;
  const Eigen::VectorXd& y;
  double lambda;
  double denom;  // N * Var(y)
  long* evals;

  ReducedContext(const Skeleton& s_, const std::vector<ParamRole>& roles_,
                 const Frame& data_, const Eigen::VectorXd& y_, double lambda_,
                 long* evals_)
      : s(s_), roles(roles_), maps(role_maps(roles_)), data(data_), y(y_),
        lambda(lambda_), evals(evals_) {
    const double var = population_variance(y);
    if (var <= 0.0) throw DataError("degenerate target: Var(y) = 0");
    denom = static_cast<double>(y.size()) * var;
  }

  double operator()(const Eigen::VectorXd& q) const {
    if (evals) ++*evals;
    auto ps = build_probe_system(s, roles, q, data);
    if (!ps) return kInf;
    auto w = solve_linear(*ps, y, lambda);
    if (!w) return kInf;
    const Eigen::VectorXd f = ps->bias + ps->design * *w;
    const double J = (f - y).squaredNorm() / denom;
    return std::isfinite(J) ? J : kInf;
  }

  std::optional<Eigen::VectorXd> weights(const Eigen::VectorXd& q) const {
    auto ps = build_probe_system(s, roles, q, data);
    if (!ps) return std::nullopt;
    return solve_linear(*ps, y, lambda);
  }
};

// ---- Brent line minimization with golden-section bracketing ----

struct Bracket {
  double a, b, c, fa, fb, fc;
};

template <typename F>
Bracket bracket_minimum(F&& f, double a, double b, double fa, double fb) {
  constexpr double GOLD = 1.618034;
  constexpr double LIMIT = 100.0;
  if (fb > fa) {
    std::swap(a, b);
    std::swap(fa, fb);
  }
  double c = b + GOLD * (b - a);
  double fc = f(c);
  int guard = 0;
  while (fb > fc && ++guard < 100) {
    const double r = (b - a) * (fb - fc);
    const double q = (b - c) * (fb - fa);
    double u = b - ((b - c) * q - (b - a) * r) /
                       (2.0 * std::copysign(std::max(std::abs(q - r), 1e-21), q - r));
    const double ulim = b + LIMIT * (c - b);
    double fu;
    if ((b - u) * (u - c) > 0.0) {
      fu = f(u);
      if (fu < fc) return {b, u, c, fb, fu, fc};
      if (fu > fb) return {a, b, u, fa, fb, fu};
      u = c + GOLD * (c - b);
      fu = f(u);
    } else if ((c - u) * (u - ulim) > 0.0) {
      fu = f(u);
      if (fu < fc) {
        b = c; c = u; u = c + GOLD * (c - b);
        fb = fc; fc = fu; fu = f(u);
      }
    } else if ((u - ulim) * (ulim - c) >= 0.0) {
      u = ulim;
      fu = f(u);
    } else {
      u = c + GOLD * (c - b);
      fu = f(u);
    }
    a = b; b = c; c = u;
    fa = fb; fb = fc; fc = fu;
  }
  return {a, b, c, fa, fb, fc};
}

template <typename F>
std::pair<double, double> brent_minimize(F&& f, const Bracket& br, double tol,
                                         int max_iter = 100) {
  constexpr double CGOLD = 0.3819660;
  constexpr double ZEPS = 1e-18;
  double a = std::min(br.a, br.c), b = std::max(br.a, br.c);
  double x = br.b, w = br.b, v = br.b;
  double fx = br.fb, fw = br.fb, fv = br.fb;
  double d = 0.0, e = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double xm = 0.5 * (a + b);
    const double tol1 = tol * std::abs(x) + ZEPS;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) break;
    bool parabolic = false;
    if (std::abs(e) > tol1) {
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double etemp = e;
      e = d;
      if (!(std::abs(p) >= std::abs(0.5 * q * etemp) || p <= q * (a - x) ||
            p >= q * (b - x))) {
        parabolic = true;
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = std::copysign(tol1, xm - x);
      }
    }
    if (!parabolic) {
      e = (x >= xm) ? a - x : b - x;
      d = CGOLD * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + std::copysign(tol1, d);
    const double fu = f(u);
    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; w = x; x = u;
      fv = fw; fw = fx; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; w = u; fv = fw; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return {x, fx};
}

// One-dimensional minimization of J along direction d from point q.
template <typename F>
double line_minimize(F&& J, Eigen::VectorXd& q, const Eigen::VectorXd& d, double fq) {
  auto g = [&](double t) { return J(q + t * d); };
  Bracket br = bracket_minimum(g, 0.0, 1.0, fq, g(1.0));
  auto [t, ft] = brent_minimize(g, br, 1e-11);
  if (ft < fq) {
    q += t * d;
    return ft;
  }
  return fq;
}

// Powell's conjugate-direction method (direction-set update per iteration).
template <typename F>
std::pair<Eigen::VectorXd, double> powell_minimize(F&& J, Eigen::VectorXd q,
                                                   double rel_tol, long max_evals,
                                                   long& evals) {
  const Eigen::Index n = q.size();
  Eigen::MatrixXd dirs = Eigen::MatrixXd::Identity(n, n);
  double fq = J(q);
  const long start_evals = evals;
  for (int iter = 0; iter < 200; ++iter) {
    const double f_start = fq;
    const Eigen::VectorXd q_start = q;
    double biggest_drop = 0.0;
    Eigen::Index biggest_idx = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double f_before = fq;
      fq = line_minimize(J, q, dirs.col(i), fq);
      if (f_before - fq > biggest_drop) {
        biggest_drop = f_before - fq;
        biggest_idx = i;
      }
      if (evals - start_evals >= max_evals) return {q, fq};
    }
    if (2.0 * (f_start - fq) <= rel_tol * (std::abs(f_start) + std::abs(fq)) + 1e-300)
      return {q, fq};
    // Direction-set update: try the aggregate displacement direction.
    const Eigen::VectorXd ext = 2.0 * q - q_start;
    const double f_ext = J(ext);
    if (f_ext < f_start) {
      const double t = 2.0 * (f_start - 2.0 * fq + f_ext) *
                           (f_start - fq - biggest_drop) * (f_start - fq - biggest_drop) -
                       biggest_drop * (f_start - f_ext) * (f_start - f_ext);
      if (t < 0.0) {
        Eigen::VectorXd new_dir = q - q_start;
        fq = line_minimize(J, q, new_dir, fq);
        dirs.col(biggest_idx) = dirs.col(n - 1);
        dirs.col(n - 1) = new_dir;
      }
    }
    if (evals - start_evals >= max_evals) return {q, fq};
  }
  return {q, fq};
}

// Start-point policy shared by both paths: zeros, ones, then uniform [-5,5].
inline Eigen::VectorXd start_point(int k, Eigen::Index dim, uint64_t seed) {
  if (k == 0) return Eigen::VectorXd::Zero(dim);
  if (k == 1) return Eigen::VectorXd::Ones(dim);
  std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(k)));
  std::uniform_real_distribution<double> U(-5.0, 5.0);
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = U(rng);
  return v;
}

}  // namespace detail

// Multi-start Powell minimization of the reduced objective. Returns the best
// (q*, w*) pair, or nullopt when every start stays non-finite.
inline std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> powell_search(
    const Skeleton& s, const std::vector<ParamRole>& roles, const Frame& data,
    const Eigen::VectorXd& y, const FitOptions& opts, long* evals_out = nullptr) {
  long evals = 0;
  detail::ReducedContext J(s, roles, data, y, opts.ridge_lambda, &evals);
  const Eigen::Index dim = static_cast<Eigen::Index>(J.maps.nonlinear.size());
  if (dim == 0) throw DataError("powell_search requires at least one nonlinear parameter");

  const long per_start = static_cast<long>(opts.powell_evals_per_dim) * dim;
  Eigen::VectorXd best_q;
  double best_J = kInf;
  for (int k = 0; k < opts.n_starts; ++k) {
    if (opts.max_total_evals > 0 && evals >= opts.max_total_evals) break;
    long budget = per_start;
    if (opts.max_total_evals > 0) budget = std::min(budget, opts.max_total_evals - evals);
    auto [q, fq] = detail::powell_minimize(J, detail::start_point(k, dim, opts.seed),
                                           opts.powell_rel_tol, budget, evals);
    if (fq < best_J) {
      best_J = fq;
      best_q = q;
    }
  }
  if (evals_out) *evals_out += evals;
  if (!std::isfinite(best_J)) return std::nullopt;
  auto w = J.weights(best_q);
  if (!w) return std::nullopt;
  return std::make_pair(best_q, *w);
}

inline double reduced_objective(const Skeleton& s, const std::vector<ParamRole>& roles,
                                const Eigen::VectorXd& q, const Frame& data,
                                const Eigen::VectorXd& y, double lambda = 1e-10) {
  detail::ReducedContext J(s, roles, data, y, lambda, nullptr);
  return J(q);
}

namespace detail {

// Full NMSE over all parameters jointly; the fallback objective.
struct FullObjective {
  const Skeleton& s;
  const Frame& data;
  const Eigen::VectorXd& y;
  double denom;
  long* evals;

  FullObjective(const Skeleton& s_, const Frame& data_, const Eigen::VectorXd& y_,
                long* evals_)
      : s(s_), data(data_), y(y_), evals(evals_) {
    const double var = population_variance(y);
    if (var <= 0.0) throw DataError("degenerate target: Var(y) = 0");
    denom = static_cast<double>(y.size()) * var;
  }

  double operator()(const Eigen::VectorXd& theta) const {
    if (evals) ++*evals;
    const Eigen::ArrayXd f = evaluate(s, theta, data);
    const double J = (f - y.array()).square().sum() / denom;
    return std::isfinite(J) ? J : kInf;
  }
};

// BFGS with central-difference gradients and Armijo backtracking. Returns the
// best point seen; gradient failures end the start early.
template <typename F>
std::pair<Eigen::VectorXd, double> bfgs_minimize(F&& obj, Eigen::VectorXd x,
                                                 int max_iters, long max_evals,
                                                 long& evals) {
  const Eigen::Index n = x.size();
  double fx = obj(x);
  if (!std::isfinite(fx)) return {x, fx};

  auto gradient = [&](const Eigen::VectorXd& p) -> std::optional<Eigen::VectorXd> {
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = std::max(1e-7, 1e-7 * std::abs(p[i]));
      Eigen::VectorXd a = p, b = p;
      a[i] += h;
      b[i] -= h;
      const double fa = obj(a), fb = obj(b);
      if (!std::isfinite(fa) || !std::isfinite(fb)) return std::nullopt;
      g[i] = (fa - fb) / (2.0 * h);
    }
    return g;
  };

  auto gopt = gradient(x);
  if (!gopt) return {x, fx};
  Eigen::VectorXd g = *gopt;
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  const long start_evals = evals;

  for (int iter = 0; iter < max_iters; ++iter) {
    if (evals - start_evals >= max_evals) break;
    Eigen::VectorXd d = -(H * g);
    double slope = d.dot(g);
    if (slope >= 0.0) {
      H.setIdentity();
      d = -g;
      slope = d.dot(g);
    }
    if (g.norm() <= 1e-13 * (1.0 + std::abs(fx))) break;

    double alpha = 1.0;
    double f_new = kInf;
    Eigen::VectorXd x_new;
    bool ok = false;
    for (int bt = 0; bt < 40; ++bt) {
      x_new = x + alpha * d;
      f_new = obj(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * alpha * slope) {
        ok = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!ok) break;

    auto g_new_opt = gradient(x_new);
    if (!g_new_opt) {
      x = x_new;
      fx = f_new;
      break;
    }
    const Eigen::VectorXd sv = x_new - x;
    const Eigen::VectorXd yv = *g_new_opt - g;
    const double ys = yv.dot(sv);
    if (ys > 1e-12 * yv.norm() * sv.norm()) {
      const double rho = 1.0 / ys;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * sv * yv.transpose()) * H * (I - rho * yv * sv.transpose()) +
          rho * sv * sv.transpose();
    } else {
      H.setIdentity();
    }
    const double improvement = fx - f_new;
    x = x_new;
    fx = f_new;
    g = *g_new_opt;
    if (improvement <= 1e-14 * (std::abs(fx) + 1e-25)) break;
  }
  return {x, fx};
}

}  // namespace detail

// Quasi-Newton fit of all parameters jointly; the generic path used when the
// separable structure is absent or unhelpful.
inline std::optional<FitResult> fallback_fit(const Skeleton& s, const Frame& data,
                                             const Eigen::VectorXd& y,
                                             const FitOptions& opts,
                                             long* evals_out = nullptr) {
  long evals = 0;
  detail::FullObjective obj(s, data, y, &evals);
  const Eigen::Index dim = s.param_count;

  FitResult best;
  best.path = FitPath::Fallback;
  if (dim == 0) {
    best.theta.resize(0);
    best.nmse = obj(best.theta);
    best.evals = evals;
    if (evals_out) *evals_out += evals;
    if (!std::isfinite(best.nmse)) return std::nullopt;
    return best;
  }

  for (int k = 0; k < opts.n_starts; ++k) {
    if (opts.max_total_evals > 0 && evals >= opts.max_total_evals) break;
    long budget = 1000L * dim;
    if (opts.max_total_evals > 0) budget = std::min(budget, opts.max_total_evals - evals);
    auto [x, fx] = detail::bfgs_minimize(obj, detail::start_point(k, dim, opts.seed + 0x5eedULL),
                                         opts.bfgs_max_iters, budget, evals);
    if (fx < best.nmse) {
      best.nmse = fx;
      best.theta = x;
    }
  }
  best.evals = evals;
  if (evals_out) *evals_out += evals;
  if (!std::isfinite(best.nmse)) return std::nullopt;
  return best;
}

// Full fitting pipeline: classify roles, run the separable path and the
// fallback path, keep whichever reaches the lower NMSE. Differences within
// 1e-15 absolute are ties (both solutions are numerically exact at that
// level) and keep the separable path. Nullopt when both fail.
inline std::optional<FitResult> mixed_optimize(const Skeleton& s, const Frame& data,
                                               const Eigen::VectorXd& y,
                                               const FitOptions& opts = {}) {
  if (population_variance(y) <= 0.0) throw DataError("degenerate target: Var(y) = 0");
  if (opts.warn_underdetermined && y.size() < s.param_count)
    std::cerr << "warning: fewer rows (" << y.size() << ") than parameters ("
              << s.param_count << ")\n";

  const std::vector<ParamRole> roles = classify_param_roles(s);
  const detail::RoleMaps maps = detail::role_maps(roles);
  long evals = 0;

  std::optional<FitResult> mixed;
  if (maps.nonlinear.empty()) {
    detail::ReducedContext J(s, roles, data, y, opts.ridge_lambda, &evals);
    const Eigen::VectorXd q0(0);
    const double j = J(q0);
    if (std::isfinite(j)) {
      auto w = J.weights(q0);
      if (w) {
        FitResult r;
        r.theta = detail::assemble_theta(maps, *w, q0);
        r.nmse = j;
        r.path = FitPath::Mixed;
        mixed = r;
      }
    }
  } else {
    auto qw = powell_search(s, roles, data, y, opts, &evals);
    if (qw) {
      FitResult r;
      r.theta = detail::assemble_theta(maps, qw->second, qw->first);
      r.nmse = reduced_objective(s, roles, qw->first, data, y, opts.ridge_lambda);
      r.path = FitPath::Mixed;
      if (std::isfinite(r.nmse)) mixed = r;
    }
  }

  std::optional<FitResult> fb = fallback_fit(s, data, y, opts, &evals);

  std::optional<FitResult> out;
  if (mixed && (!fb || mixed->nmse <= fb->nmse + 1e-15)) out = mixed;
  else if (fb) out = fb;
  if (!out) return std::nullopt;
  out->evals = evals;
  return out;
}

}  // namespace eqdisc
