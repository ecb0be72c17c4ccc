#include <catch2/catch_amalgamated.hpp>

#include "eqdisc/hints.hpp"

#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

using namespace eqdisc;

namespace {

Frame grid1(int n, double lo, double hi, const std::string& name = "x") {
  Frame f;
  f.columns = {name};
  f.X.resize(n, 1);
  for (int i = 0; i < n; ++i) f.X(i, 0) = lo + (hi - lo) * i / (n - 1);
  return f;
}

Frame grid2(int n_side, double lo, double hi) {
  Frame f;
  f.columns = {"x1", "x2"};
  f.X.resize(n_side * n_side, 2);
  int r = 0;
  for (int i = 0; i < n_side; ++i)
    for (int j = 0; j < n_side; ++j) {
      f.X(r, 0) = lo + (hi - lo) * i / (n_side - 1);
      f.X(r, 1) = lo + (hi - lo) * j / (n_side - 1);
      ++r;
    }
  return f;
}

// Independent re-derivation of the dominant-term ranking: hand-rolled feature
// expansion, loop-based standardization, ridge normal equations via the
// elimination solver. Only valid for the small fixtures used below.
std::vector<std::pair<std::string, double>> ridge_rank_oracle(const Frame& inputs,
                                                              const Eigen::VectorXd& y) {
  const int n = static_cast<int>(y.size());
  const int cols = static_cast<int>(inputs.X.cols());
  std::vector<std::string> names;
  std::vector<std::vector<double>> feats;
  auto push = [&](const std::string& nm, const std::vector<double>& v) {
    names.push_back(nm);
    feats.push_back(v);
  };
  for (int c = 0; c < cols; ++c) {
    std::vector<double> x1(n), x2(n), x3(n), sn(n), cs(n), ex(n), lg(n);
    for (int i = 0; i < n; ++i) {
      const double x = inputs.X(i, c);
      x1[i] = x;
      x2[i] = x * x;
      x3[i] = x * x * x;
      sn[i] = std::sin(x);
      cs[i] = std::cos(x);
      ex[i] = std::exp(std::min(20.0, std::max(-20.0, x)));
      lg[i] = std::log(std::abs(x) + 1.0);
    }
    const std::string& nm = inputs.columns[c];
    push(nm, x1);
    push(nm + "^2", x2);
    push(nm + "^3", x3);
    push("sin(" + nm + ")", sn);
    push("cos(" + nm + ")", cs);
    push("exp(" + nm + ")", ex);
    push("log(|" + nm + "|+1)", lg);
  }
  for (int a = 0; a < cols; ++a)
    for (int b = a + 1; b < cols; ++b) {
      std::vector<double> p(n);
      for (int i = 0; i < n; ++i) p[i] = inputs.X(i, a) * inputs.X(i, b);
      push(inputs.columns[a] + "*" + inputs.columns[b], p);
    }

  std::vector<double> yv(y.data(), y.data() + n);
  const double ym = oracles::mean_loop(yv);
  const double ys = std::sqrt(oracles::pop_var_loop(yv));
  std::vector<double> yz(n);
  for (int i = 0; i < n; ++i) yz[i] = (yv[i] - ym) / ys;

  std::vector<std::string> kept;
  std::vector<std::vector<double>> Z;
  for (std::size_t k = 0; k < feats.size(); ++k) {
    const double m = oracles::mean_loop(feats[k]);
    const double s = std::sqrt(oracles::pop_var_loop(feats[k]));
    if (s <= 1e-12) continue;
    std::vector<double> z(n);
    for (int i = 0; i < n; ++i) z[i] = (feats[k][i] - m) / s;
    kept.push_back(names[k]);
    Z.push_back(z);
  }

  const std::size_t p = Z.size();
  std::vector<std::vector<double>> A(p, std::vector<double>(p, 0.0));
  std::vector<double> b(p, 0.0);
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t c = 0; c < p; ++c)
      for (int i = 0; i < n; ++i) A[a][c] += Z[a][i] * Z[c][i];
    A[a][a] += 1e-6;
    for (int i = 0; i < n; ++i) b[a] += Z[a][i] * yz[i];
  }
  const std::vector<double> beta = oracles::gauss_solve(A, b);

  std::vector<std::pair<std::string, double>> ranked(p);
  for (std::size_t k = 0; k < p; ++k) ranked[k] = {kept[k], std::abs(beta[k])};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& c) { return a.second > c.second; });
  return ranked;
}

}  // namespace

TEST_CASE("cubic target on a symmetric grid: odd parity and x^3 dominates") {
  const Frame f = grid1(41, -2.0, 2.0);
  const Eigen::VectorXd y = f.X.col(0).array().cube();
  const DataHint h = build_data_hint(f, y);

  REQUIRE(!h.stats_only);
  REQUIRE(h.parity.size() == 1);
  CHECK(h.parity[0].parity == Parity::Odd);
  CHECK(h.parity[0].confidence >= 0.9);
  CHECK(h.parity[0].confidence <= 1.0);
  CHECK(h.parity[0].pairs >= 30);

  REQUIRE(!h.dominant_terms.empty());
  CHECK(h.dominant_terms[0].description == "x^3");
  for (std::size_t i = 1; i < h.dominant_terms.size(); ++i)
    CHECK(h.dominant_terms[i - 1].weight >= h.dominant_terms[i].weight);

  // negating y preserves oddness
  const DataHint hneg = build_data_hint(f, -y);
  CHECK(hneg.parity[0].parity == Parity::Odd);
  CHECK(hneg.parity[0].confidence >= 0.9);
}

TEST_CASE("square target on a symmetric grid: even parity") {
  const Frame f = grid1(41, -2.0, 2.0);
  const Eigen::VectorXd y = f.X.col(0).array().square();
  const DataHint h = build_data_hint(f, y);
  REQUIRE(h.parity.size() == 1);
  CHECK(h.parity[0].parity == Parity::Even);
  CHECK(h.parity[0].confidence >= 0.9);
  CHECK(h.dominant_terms[0].description == "x^2");
}

TEST_CASE("composing with |x| forces even parity") {
  const Frame f = grid1(61, -2.0, 2.0);
  Eigen::VectorXd y(f.rows());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double a = std::abs(f.X(i, 0));
    y[i] = a * a * a + 0.5 * a;  // odd formula applied to |x|
  }
  const DataHint h = build_data_hint(f, y);
  CHECK(h.parity[0].parity == Parity::Even);
}

TEST_CASE("product target: x1*x2 is the top dominant term") {
  const Frame f = grid2(15, -1.5, 1.5);
  const Eigen::VectorXd y = 2.0 * (f.X.col(0).array() * f.X.col(1).array());
  const DataHint h = build_data_hint(f, y);

  REQUIRE(!h.dominant_terms.empty());
  CHECK(h.dominant_terms[0].description == "x1*x2");
  // the product is odd in each variable separately
  REQUIRE(h.parity.size() == 2);
  CHECK(h.parity[0].parity == Parity::Odd);
  CHECK(h.parity[1].parity == Parity::Odd);
}

TEST_CASE("dominant-term ranking matches the elimination-solver oracle") {
  const Frame f1 = grid1(41, -2.0, 2.0);
  const Eigen::VectorXd y1 =
      f1.X.col(0).array().cube() + 0.3 * f1.X.col(0).array().sin();
  const DataHint h1 = build_data_hint(f1, y1);
  const auto oracle1 = ridge_rank_oracle(f1, y1);
  REQUIRE(h1.dominant_terms.size() == std::min<std::size_t>(8, oracle1.size()));
  for (std::size_t i = 0; i < h1.dominant_terms.size(); ++i) {
    CHECK(h1.dominant_terms[i].description == oracle1[i].first);
    CHECK(h1.dominant_terms[i].weight == Catch::Approx(oracle1[i].second).margin(1e-8));
  }

  const Frame f2 = grid2(9, -1.2, 1.2);
  const Eigen::VectorXd y2 = 2.0 * (f2.X.col(0).array() * f2.X.col(1).array()) +
                             0.7 * f2.X.col(0).array().square();
  const DataHint h2 = build_data_hint(f2, y2);
  const auto oracle2 = ridge_rank_oracle(f2, y2);
  for (std::size_t i = 0; i < h2.dominant_terms.size(); ++i) {
    CHECK(h2.dominant_terms[i].description == oracle2[i].first);
    CHECK(h2.dominant_terms[i].weight == Catch::Approx(oracle2[i].second).margin(1e-8));
  }
}

TEST_CASE("ranking is invariant under affine rescaling of the target") {
  const Frame f = grid1(41, -2.0, 2.0);
  const Eigen::VectorXd y = f.X.col(0).array().cube() + 0.2 * f.X.col(0).array();
  const DataHint a = build_data_hint(f, y);
  const DataHint b = build_data_hint(f, Eigen::VectorXd(3.5 * y.array() + 7.0));
  REQUIRE(a.dominant_terms.size() == b.dominant_terms.size());
  for (std::size_t i = 0; i < a.dominant_terms.size(); ++i) {
    CHECK(a.dominant_terms[i].description == b.dominant_terms[i].description);
    CHECK(a.dominant_terms[i].weight == Catch::Approx(b.dominant_terms[i].weight).margin(1e-6));
  }
}

TEST_CASE("small or degenerate datasets degrade to stats-only hints") {
  const Frame small = grid1(10, -1.0, 1.0);
  const Eigen::VectorXd ys = small.X.col(0);
  const DataHint hs = build_data_hint(small, ys);
  CHECK(hs.stats_only);
  CHECK(hs.parity.empty());
  CHECK(hs.dominant_terms.empty());
  CHECK(!hs.note.empty());

  const Frame f = grid1(40, -1.0, 1.0);
  const Eigen::VectorXd yc = Eigen::VectorXd::Constant(40, 3.25);
  const DataHint hc = build_data_hint(f, yc);
  CHECK(hc.stats_only);
  CHECK(hc.note.find("constant") != std::string::npos);
  CHECK(hc.bias_ratio == 0.0);

  Eigen::VectorXd wrong(5);
  wrong.setZero();
  CHECK_THROWS_AS(build_data_hint(f, wrong), DataError);
}

TEST_CASE("asymmetric sampling yields no parity tag") {
  const Frame f = grid1(50, 0.1, 2.0);  // no mirrored rows at all
  const Eigen::VectorXd y = f.X.col(0).array().cube();
  const DataHint h = build_data_hint(f, y);
  CHECK(h.parity[0].parity == Parity::None);
  CHECK(h.parity[0].pairs == 0);
  CHECK(h.parity[0].confidence == 0.0);
}

TEST_CASE("feature expansion is capped at 200 dropping highest degree first") {
  Frame big;
  big.X = Eigen::MatrixXd::Random(25, 25);
  for (int c = 0; c < 25; ++c) big.columns.push_back("v" + std::to_string(c));
  const auto fs = detail::expand_features(big);
  CHECK(fs.descriptions.size() <= 200);
  CHECK(fs.descriptions.size() == static_cast<std::size_t>(fs.matrix.cols()));
  // uncapped count: 25*7 unary features + 300 pairwise products
  const auto uncapped = detail::expand_features(big, 100000);
  CHECK(uncapped.descriptions.size() == 475);
  // a feature is only dropped once every strictly higher degree is exhausted
  const std::vector<std::string> kept(fs.descriptions);
  int dropped_min_degree = 99;
  for (std::size_t i = 0; i < uncapped.descriptions.size(); ++i)
    if (std::find(kept.begin(), kept.end(), uncapped.descriptions[i]) == kept.end())
      dropped_min_degree = std::min(dropped_min_degree, uncapped.degrees[i]);
  const int kept_max_degree = *std::max_element(fs.degrees.begin(), fs.degrees.end());
  CHECK(kept_max_degree <= dropped_min_degree);
  // with 275 features to shed, all degree-3 entries go and degree-1 survives
  for (int d : fs.degrees) CHECK(d <= 2);
  for (std::size_t i = 0; i < uncapped.descriptions.size(); ++i)
    if (uncapped.degrees[i] == 1)
      CHECK(std::find(kept.begin(), kept.end(), uncapped.descriptions[i]) != kept.end());
}

TEST_CASE("rendering: sections, line budget, determinism") {
  const Frame f = grid1(41, -2.0, 2.0);
  const Eigen::VectorXd y = f.X.col(0).array().cube();
  const DataHint h = build_data_hint(f, y);
  const std::string text = render_hint(h);

  CHECK(text.find("STATS\n") != std::string::npos);
  CHECK(text.find("SYMMETRY\n") != std::string::npos);
  CHECK(text.find("DOMINANT TERMS\n") != std::string::npos);
  CHECK(text.find("CONSTRAINTS\n") != std::string::npos);
  CHECK(text.find("symmetry: odd in x") != std::string::npos);
  CHECK(render_hint(h) == text);

  const long lines = std::count(text.begin(), text.end(), '\n');
  CHECK(lines <= 40);

  // even tag renders as even
  const DataHint he = build_data_hint(f, Eigen::VectorXd(y.array().abs()));
  CHECK(render_hint(he).find("symmetry: even in x") != std::string::npos);

  // stats-only hints omit the analysis sections
  const Frame small = grid1(10, -1.0, 1.0);
  const std::string st = render_hint(build_data_hint(small, Eigen::VectorXd(small.X.col(0))));
  CHECK(st.find("STATS\n") != std::string::npos);
  CHECK(st.find("CONSTRAINTS\n") != std::string::npos);
  CHECK(st.find("SYMMETRY") == std::string::npos);
  CHECK(st.find("DOMINANT") == std::string::npos);
  CHECK(st.find("note:") != std::string::npos);
}

TEST_CASE("rendering stays within the line budget for wide datasets") {
  Frame big;
  big.X = Eigen::MatrixXd::Random(60, 12).array() * 2.0;
  for (int c = 0; c < 12; ++c) big.columns.push_back("v" + std::to_string(c));
  Eigen::VectorXd y = big.X.col(0).array().cube() + big.X.col(1).array();
  const DataHint h = build_data_hint(big, y);
  const std::string text = render_hint(h);
  CHECK(std::count(text.begin(), text.end(), '\n') <= 40);
  CHECK(text.find("more variables") != std::string::npos);
}

TEST_CASE("constraint lines flag positivity") {
  const Frame f = grid1(30, 0.5, 2.0);
  Eigen::VectorXd y = f.X.col(0).array().log() + 5.0;
  const std::string text = render_hint(build_data_hint(f, y));
  CHECK(text.find("x: range [0.5, 2], strictly positive") != std::string::npos);
  CHECK(text.find("y: range [") != std::string::npos);
  CHECK(text.find("bias: mean/std = ") != std::string::npos);
}
