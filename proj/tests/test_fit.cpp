// Separable fitting: probes, ridge solve, Powell search, BFGS fallback.

#include "eqdisc/fit.hpp"
#include "support/fuzz.hpp"
#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace eqdisc;

namespace {

Frame linspace_frame(const std::string& col, double lo, double hi, int n) {
  Frame f;
  f.columns = {col};
  f.X.resize(n, 1);
  for (int i = 0; i < n; ++i)
    f.X(i, 0) = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  return f;
}

Eigen::VectorXd vec(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("probe system: worked example") {
  Skeleton s = parse("params[0]+params[1]*sin(params[2]*x)");
  auto roles = classify_param_roles(s);
  Frame f;
  f.columns = {"x"};
  f.X.resize(2, 1);
  f.X << 0.0, std::numbers::pi / 4.0;

  auto ps = build_probe_system(s, roles, vec({2.0}), f);
  REQUIRE(ps.has_value());
  CHECK(ps->bias[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(ps->bias[1] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(ps->design.rows() == 2);
  REQUIRE(ps->design.cols() == 2);
  CHECK(ps->design(0, 0) == Catch::Approx(1.0));
  CHECK(ps->design(1, 0) == Catch::Approx(1.0));
  CHECK(ps->design(0, 1) == Catch::Approx(0.0).margin(1e-15));
  CHECK(ps->design(1, 1) == Catch::Approx(1.0));
}

TEST_CASE("probe system: no linear params and invalid probes") {
  Skeleton s = parse("sin(params[0]*x)");
  auto roles = classify_param_roles(s);
  Frame f = linspace_frame("x", 1.0, 2.0, 3);

  auto ps = build_probe_system(s, roles, vec({1.5}), f);
  REQUIRE(ps.has_value());
  CHECK(ps->design.cols() == 0);
  CHECK(ps->bias[0] == Catch::Approx(std::sin(1.5)));

  Skeleton bad = parse("log(params[0]*x)");
  auto ps2 = build_probe_system(bad, classify_param_roles(bad), vec({-1.0}), f);
  CHECK_FALSE(ps2.has_value());
}

TEST_CASE("solve_linear: frozen cases and ridge limit") {
  ProbeSystem ps;
  ps.design.resize(2, 2);
  ps.design << 1, 0, 1, 1;
  ps.bias = Eigen::VectorXd::Zero(2);

  auto w = solve_linear(ps, vec({1.0, 4.0}), 0.0);
  REQUIRE(w.has_value());
  CHECK((*w)[0] == Catch::Approx(1.0));
  CHECK((*w)[1] == Catch::Approx(3.0));

  ProbeSystem eye;
  eye.design = Eigen::MatrixXd::Identity(3, 3);
  eye.bias = Eigen::VectorXd::Zero(3);
  auto wi = solve_linear(eye, vec({5.0, -2.0, 0.5}), 0.0);
  REQUIRE(wi.has_value());
  CHECK((*wi)[0] == Catch::Approx(5.0));
  CHECK((*wi)[2] == Catch::Approx(0.5));

  auto wr = solve_linear(eye, vec({5.0, -2.0, 0.5}), 1e12);
  REQUIRE(wr.has_value());
  CHECK(wr->norm() < 1e-10);
}

TEST_CASE("solve_linear matches a hand-rolled normal-equation oracle") {
  std::mt19937_64 rng(7211);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 12, p = 4;
    ProbeSystem ps;
    ps.design.resize(n, p);
    ps.bias.resize(n);
    Eigen::VectorXd y(n);
    std::vector<std::vector<double>> Xo(n, std::vector<double>(p));
    std::vector<double> yo(n);
    for (int i = 0; i < n; ++i) {
      ps.bias[i] = N(rng);
      for (int j = 0; j < p; ++j) {
        ps.design(i, j) = N(rng);
        Xo[i][j] = ps.design(i, j);
      }
      y[i] = N(rng);
      yo[i] = y[i] - ps.bias[i];
    }
    auto w = solve_linear(ps, y, 0.0);
    REQUIRE(w.has_value());
    auto wo = oracles::least_squares(Xo, yo);
    for (int j = 0; j < p; ++j) {
      const double scale = std::max(1.0, std::abs(wo[j]));
      CHECK(std::abs((*w)[j] - wo[j]) / scale <= 1e-10);
    }
  }
}

TEST_CASE("reduced objective: frozen arithmetic and sentinels") {
  // f is identically zero at q = 0, leaving J = mean(y^2)/Var(y) = 2.5.
  Skeleton s = parse("sin(params[0]*x)");
  auto roles = classify_param_roles(s);
  Frame f = linspace_frame("x", 1.0, 3.0, 3);
  Eigen::VectorXd y = vec({0.0, 1.0, 2.0});
  CHECK(reduced_objective(s, roles, vec({0.0}), f, y) == Catch::Approx(2.5));

  // Perfect reconstruction.
  Skeleton lin = parse("params[0]*x");
  Eigen::VectorXd y2 = 2.0 * f.X.col(0);
  CHECK(reduced_objective(lin, classify_param_roles(lin), Eigen::VectorXd(0), f, y2) <
        1e-20);

  // Invalid probe is +inf, not an exception.
  Skeleton bad = parse("log(params[0]*x)");
  CHECK(std::isinf(reduced_objective(bad, classify_param_roles(bad), vec({-1.0}), f, y)));

  // Degenerate target throws.
  CHECK_THROWS_AS(reduced_objective(s, roles, vec({0.0}), f, vec({1.0, 1.0, 1.0})),
                  DataError);
}

TEST_CASE("mean predictor scores exactly one") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> N(2.0, 3.0);
  Frame f = linspace_frame("x", -1.0, 1.0, 50);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) y[i] = N(rng);

  Skeleton c = parse("params[0]");
  auto roles = classify_param_roles(c);
  const double j = reduced_objective(c, roles, Eigen::VectorXd(0), f, y, 0.0);
  CHECK(j == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("powell search recovers a separable sinusoid") {
  Frame f = linspace_frame("x", -3.0, 3.0, 200);
  Eigen::VectorXd y = (1.0 + 3.0 * (2.0 * f.X.col(0).array()).sin()).matrix();

  Skeleton s = parse("params[0]+params[1]*sin(params[2]*x)");
  auto roles = classify_param_roles(s);
  FitOptions opts;
  opts.seed = 42;
  long evals = 0;
  auto qw = powell_search(s, roles, f, y, opts, &evals);
  REQUIRE(qw.has_value());
  const double J = reduced_objective(s, roles, qw->first, f, y);
  CHECK(J < 1e-12);
  CHECK(std::abs(std::abs(qw->first[0]) - 2.0) < 1e-5);
  CHECK(evals > 0);
}

TEST_CASE("powell search: flat objective returns without progress") {
  Frame f = linspace_frame("x", -1.0, 1.0, 20);
  Frame f2 = f;
  f2.columns = {"x", "z"};
  f2.X.conservativeResize(20, 2);
  f2.X.col(1).setZero();
  // params[1] multiplies a zero column: J is constant in it.
  Skeleton s = parse("params[0]*x+sin(params[1]*z)");
  auto roles = classify_param_roles(s);
  Eigen::VectorXd y = 2.0 * f2.X.col(0);
  auto qw = powell_search(s, roles, f2, y, {}, nullptr);
  REQUIRE(qw.has_value());
  CHECK(reduced_objective(s, roles, qw->first, f2, y) < 1e-18);
}

TEST_CASE("fallback fit: closed-form target and hopeless skeletons") {
  Frame f = linspace_frame("x", -2.0, 2.0, 60);
  Eigen::VectorXd y = 2.0 * f.X.col(0);

  auto r = fallback_fit(parse("params[0]*x"), f, y, {});
  REQUIRE(r.has_value());
  CHECK(r->theta[0] == Catch::Approx(2.0).margin(1e-6));
  CHECK(r->nmse < 1e-12);
  CHECK(r->path == FitPath::Fallback);
  CHECK(r->evals > 0);

  // Every evaluation is non-finite regardless of theta.
  auto bad = fallback_fit(parse("params[0]+log(-(x^2))"), f, y, {});
  CHECK_FALSE(bad.has_value());
}

TEST_CASE("mixed_optimize: separable recovery takes the mixed path") {
  Frame f = linspace_frame("x", -3.0, 3.0, 200);
  Eigen::VectorXd y = (1.0 + 3.0 * (2.0 * f.X.col(0).array()).sin()).matrix();

  FitOptions opts;
  opts.seed = 7;
  auto r = mixed_optimize(parse("params[0]+params[1]*sin(params[2]*x)"), f, y, opts);
  REQUIRE(r.has_value());
  CHECK(r->nmse < 1e-12);
  CHECK(r->path == FitPath::Mixed);
  REQUIRE(r->theta.size() == 3);
}

TEST_CASE("mixed_optimize: purely linear skeleton matches closed-form least squares") {
  Frame f = linspace_frame("x", -1.0, 2.0, 40);
  Eigen::VectorXd y = (0.5 + 1.75 * f.X.col(0).array() + 0.001).matrix();

  auto r = mixed_optimize(parse("params[0]+params[1]*x"), f, y, {});
  REQUIRE(r.has_value());
  CHECK(r->path == FitPath::Mixed);

  std::vector<std::vector<double>> Xo(40, std::vector<double>(2));
  std::vector<double> yo(40);
  for (int i = 0; i < 40; ++i) {
    Xo[i][0] = 1.0;
    Xo[i][1] = f.X(i, 0);
    yo[i] = y[i];
  }
  auto wo = oracles::least_squares(Xo, yo);
  CHECK(r->theta[0] == Catch::Approx(wo[0]).margin(1e-6));
  CHECK(r->theta[1] == Catch::Approx(wo[1]).margin(1e-6));
  CHECK(r->nmse < 1e-20);
}

TEST_CASE("mixed_optimize throws on degenerate targets") {
  Frame f = linspace_frame("x", -1.0, 1.0, 10);
  Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 3.0);
  CHECK_THROWS_AS(mixed_optimize(parse("params[0]*x"), f, y, {}), DataError);
}

TEST_CASE("affine reconstruction certifies role classification (fuzz)") {
  std::mt19937_64 rng(31337);
  fuzz::FuzzConfig cfg;
  int validated = 0;
  int trials = 0;
  while (validated < 100 && trials < 2000) {
    ++trials;
    Skeleton s = fuzz::random_skeleton(rng, cfg);
    if (s.param_count == 0) continue;
    auto roles = classify_param_roles(s);
    int n_lin = 0;
    for (auto r : roles)
      if (r == ParamRole::Linear) ++n_lin;

    Frame f = fuzz::random_frame(rng, cfg.variables, 24);
    const int n_q = s.param_count - n_lin;
    Eigen::VectorXd q = fuzz::random_theta(rng, n_q, -2.0, 2.0);
    auto ps = build_probe_system(s, roles, q, f);
    if (!ps) continue;

    for (int rep = 0; rep < 3; ++rep) {
      Eigen::VectorXd w = fuzz::random_theta(rng, n_lin, -4.0, 4.0);
      Eigen::VectorXd theta(s.param_count);
      int li = 0, qi = 0;
      for (int i = 0; i < s.param_count; ++i)
        theta[i] = (roles[i] == ParamRole::Linear) ? w[li++] : q[qi++];
      Eigen::ArrayXd direct = evaluate(s, theta, f);
      Eigen::ArrayXd recon = (ps->bias + ps->design * w).array();
      for (Eigen::Index i = 0; i < direct.size(); ++i) {
        if (!std::isfinite(direct[i])) continue;
        const double scale = std::max({1.0, std::abs(direct[i]), std::abs(recon[i])});
        INFO(render(s) << " row " << i);
        CHECK(std::abs(direct[i] - recon[i]) / scale <= 1e-9);
      }
    }
    ++validated;
  }
  CHECK(validated == 100);
}

TEST_CASE("min-of-two contract on fuzzed fits") {
  std::mt19937_64 rng(4242);
  fuzz::FuzzConfig cfg;
  cfg.max_depth = 3;
  int done = 0, trials = 0;
  while (done < 30 && trials < 400) {
    ++trials;
    Skeleton s = fuzz::random_skeleton(rng, cfg);
    if (s.param_count == 0 || s.param_count > 5) continue;
    Frame f = fuzz::random_frame(rng, cfg.variables, 30);

    Eigen::VectorXd theta_true = fuzz::random_theta(rng, s.param_count, -2.0, 2.0);
    Eigen::ArrayXd target = evaluate(s, theta_true, f);
    Eigen::VectorXd y;
    if (target.allFinite() && population_variance(target.matrix()) > 1e-12) {
      y = target.matrix();
    } else {
      y.resize(30);
      std::normal_distribution<double> N(0.0, 1.0);
      for (int i = 0; i < 30; ++i) y[i] = N(rng);
    }

    FitOptions opts;
    opts.seed = 1000 + static_cast<uint64_t>(trials);
    opts.warn_underdetermined = false;
    std::optional<FitResult> mixed, fb;
    try {
      mixed = mixed_optimize(s, f, y, opts);
      fb = fallback_fit(s, f, y, opts);
    } catch (const DataError&) {
      continue;
    }
    if (fb && mixed) CHECK(mixed->nmse <= fb->nmse + 1e-15);
    if (fb && !mixed) FAIL("mixed_optimize lost a result the fallback found");
    ++done;
  }
  CHECK(done == 30);
}
