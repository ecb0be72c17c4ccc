// Semantic memory: TF-IDF arithmetic, clustering protocol, sampling, dumps.

#include "eqdisc/memory.hpp"
#include "support/memory_oracle.hpp"
#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace eqdisc;

namespace {

ScoredCandidate cand(const std::string& expr, double score) {
  ScoredCandidate c;
  c.skeleton = canonicalize(parse(expr));
  c.fit.theta = Eigen::VectorXd::Constant(c.skeleton.param_count, 1.5);
  c.fit.nmse = 1e-3;
  c.score = score;
  return c;
}

using memory_oracle::FlatOracle;

const std::vector<std::string> kPool = {
    "params[0]*sin(x)",
    "params[0]*sin(x)+params[1]",
    "params[0]*cos(x)",
    "params[0]*cos(x)+params[1]",
    "params[0]*x",
    "params[0]*x+params[1]",
    "params[0]*x^2",
    "params[0]*x^2+params[1]*x",
    "params[0]*exp(x)",
    "params[0]*exp(x)+params[1]",
    "params[0]*x*v",
    "params[0]*v+params[1]*x",
    "params[0]*tanh(x)",
    "params[0]/(1+params[1]*x)",
    "params[0]*sin(params[1]*x)",
};

}  // namespace

TEST_CASE("tfidf weights: frozen arithmetic") {
  CorpusStats stats;
  stats.total_docs = 3;
  stats.df = {{"sin", 1}, {"x", 3}, {"param", 3}};

  TokenBag bag = {{"sin", 2}, {"x", 1}, {"param", 1}};
  TfIdfVector v = tfidf_vector(bag, stats);
  CHECK(v.at("sin") == Catch::Approx(2.0 * std::log(3.0)).epsilon(1e-9));
  CHECK(v.at("x") == 0.0);    // df = N
  CHECK(v.at("param") == 0.0);

  CorpusStats solo;
  solo.total_docs = 1;
  solo.df = {{"sin", 1}, {"x", 1}};
  TfIdfVector vs = tfidf_vector({{"sin", 1}, {"x", 1}}, solo);
  for (const auto& kv : vs) CHECK(kv.second == 0.0);
}

TEST_CASE("cosine similarity: frozen values") {
  TfIdfVector u = {{"a", 1.0}, {"b", 1.0}};
  TfIdfVector v = {{"a", 1.0}};
  CHECK(cosine_sim(u, v) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
  CHECK(cosine_sim(u, u) == Catch::Approx(1.0));
  CHECK(cosine_sim(u, {{"c", 2.0}}) == 0.0);
  CHECK(cosine_sim({}, u) == 0.0);
}

TEST_CASE("insert protocol: outcomes and stats consistency") {
  SemanticMemory mem(10);
  CHECK(mem.empty());

  CHECK(mem.insert(0, cand("params[0]*sin(x)", 4.0)) == InsertOutcome::NewCluster);
  CHECK(mem.insert(0, cand("params[0]*sin(x)", 5.0)) == InsertOutcome::Replaced);
  CHECK(mem.insert(0, cand("params[0]*sin(x)", 3.0)) == InsertOutcome::Kept);
  CHECK(mem.island(0).clusters.size() == 1);
  CHECK(mem.island(0).clusters[0].elite.score == 5.0);

  CHECK(mem.insert(0, cand("params[0]*exp(x)+params[1]", 1.0)) == InsertOutcome::NewCluster);
  CHECK(mem.cluster_count() == 2);

  // Stats must describe exactly the stored bags.
  CHECK(mem.stats().total_docs == 2);
  std::map<std::string, int> expect_df;
  for (const auto& cl : mem.island(0).clusters)
    for (const auto& kv : cl.bag) ++expect_df[kv.first];
  CHECK(mem.stats().df == expect_df);

  ScoredCandidate bad = cand("params[0]*x", 1.0);
  bad.score = kInf;
  CHECK_THROWS_AS(mem.insert(0, bad), DataError);
}

TEST_CASE("islands are independent partitions") {
  SemanticMemory mem(3);
  mem.insert(0, cand("params[0]*sin(x)", 4.0));
  mem.insert(1, cand("params[0]*sin(x)", 5.0));
  CHECK(mem.island(0).clusters.size() == 1);
  CHECK(mem.island(1).clusters.size() == 1);
  CHECK(mem.island(0).clusters[0].elite.score == 4.0);
  CHECK(mem.island(1).clusters[0].elite.score == 5.0);
}

TEST_CASE("replay equivalence against a flat-list oracle") {
  std::mt19937_64 rng(90210);
  std::normal_distribution<double> score_dist(0.0, 2.0);
  SemanticMemory mem(10);
  FlatOracle oracle(10);

  int last_count = 0;
  for (int step = 0; step < 300; ++step) {
    const std::string& expr = kPool[rng() % kPool.size()];
    const int island = static_cast<int>(rng() % 10);
    const double score = score_dist(rng);
    ScoredCandidate c = cand(expr, score);
    TokenBag bag = tokenize(c.skeleton);

    mem.insert(island, c);
    oracle.insert(island, bag, render(c.skeleton), score);

    // Cluster count never decreases.
    const int count = mem.cluster_count();
    CHECK(count >= last_count);
    last_count = count;
  }

  CHECK(mem.cluster_count() == static_cast<int>(oracle.docs.size()));
  for (const auto& doc : oracle.docs) {
    const auto& clusters = mem.island(doc.island).clusters;
    REQUIRE(doc.cluster < static_cast<int>(clusters.size()));
    const auto& elite = clusters[static_cast<size_t>(doc.cluster)].elite;
    CHECK(render(elite.skeleton) == doc.expr);
    CHECK(elite.score == doc.score);
  }
  CHECK(mem.stats().total_docs == static_cast<int>(oracle.docs.size()));
  CHECK(mem.stats().df == oracle.df);
}

TEST_CASE("softmax cluster probabilities: frozen example and invariances") {
  SemanticMemory mem(1);
  mem.insert(0, cand("params[0]*sin(x)", 1.0));
  mem.insert(0, cand("params[0]*exp(x)+params[1]", 0.9));
  REQUIRE(mem.island(0).clusters.size() == 2);

  auto p = mem.cluster_probabilities(0, 0.1);
  CHECK(p[0] == Catch::Approx(0.7311).margin(1e-4));
  CHECK(p[1] == Catch::Approx(0.2689).margin(1e-4));
  CHECK(p[0] + p[1] == Catch::Approx(1.0).epsilon(1e-12));

  // Shift invariance via max subtraction.
  SemanticMemory shifted(1);
  shifted.insert(0, cand("params[0]*sin(x)", 101.0));
  shifted.insert(0, cand("params[0]*exp(x)+params[1]", 100.9));
  auto ps = shifted.cluster_probabilities(0, 0.1);
  CHECK(ps[0] == Catch::Approx(p[0]).epsilon(1e-12));

  // Equal scores are uniform; a single cluster has probability one.
  SemanticMemory eq(1);
  eq.insert(0, cand("params[0]*sin(x)", 2.0));
  eq.insert(0, cand("params[0]*exp(x)+params[1]", 2.0));
  auto pe = eq.cluster_probabilities(0, 0.1);
  CHECK(pe[0] == Catch::Approx(0.5));
  SemanticMemory one(1);
  one.insert(0, cand("params[0]*sin(x)", 2.0));
  CHECK(one.cluster_probabilities(0, 0.1)[0] == Catch::Approx(1.0));
}

TEST_CASE("exemplar sampling follows the softmax and samples without replacement") {
  SemanticMemory mem(1);
  mem.insert(0, cand("params[0]*sin(x)", 1.0));
  mem.insert(0, cand("params[0]*exp(x)+params[1]", 0.9));

  std::mt19937_64 rng(777);
  int first_is_top = 0;
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    auto ex = mem.sample_exemplars(rng, 2);
    REQUIRE(ex.size() == 2);
    CHECK(render(ex[0].skeleton) != render(ex[1].skeleton));
    if (ex[0].score == 1.0) ++first_is_top;
  }
  const double freq = static_cast<double>(first_is_top) / trials;
  CHECK(freq == Catch::Approx(0.7311).margin(0.01));

  SemanticMemory empty_mem(10);
  std::mt19937_64 rng2(1);
  CHECK(empty_mem.sample_exemplars(rng2, 2).empty());
}

TEST_CASE("island choice is uniform among nonempty islands") {
  SemanticMemory mem(4);
  mem.insert(1, cand("params[0]*sin(x)", 1.0));
  mem.insert(3, cand("params[0]*x", 1.0));
  std::mt19937_64 rng(2024);
  int hits1 = 0, total = 10000;
  for (int t = 0; t < total; ++t) {
    int island = -1;
    auto ex = mem.sample_exemplars(rng, 1, 0.1, &island);
    REQUIRE(ex.size() == 1);
    CHECK((island == 1 || island == 3));
    if (island == 1) ++hits1;
  }
  CHECK(static_cast<double>(hits1) / total == Catch::Approx(0.5).margin(0.02));
}

TEST_CASE("dump and restore round-trip byte-identically") {
  SemanticMemory mem(10);
  std::mt19937_64 rng(5150);
  std::normal_distribution<double> score_dist(0.0, 2.0);
  for (int i = 0; i < 60; ++i)
    mem.insert(static_cast<int>(rng() % 10), cand(kPool[rng() % kPool.size()], score_dist(rng)));

  std::ostringstream first;
  mem.dump(first);
  std::istringstream in(first.str());
  SemanticMemory back = SemanticMemory::restore(in, 10);

  CHECK(back.cluster_count() == mem.cluster_count());
  CHECK(back.stats().total_docs == mem.stats().total_docs);
  CHECK(back.stats().df == mem.stats().df);

  std::ostringstream second;
  back.dump(second);
  CHECK(second.str() == first.str());

  std::istringstream bad("{\"island\": 99, \"cluster\": 0, \"expr\": \"x\", \"theta\": [], \"score\": 1.0}");
  CHECK_THROWS_AS(SemanticMemory::restore(bad, 10), DataError);
  std::istringstream junk("not json");
  CHECK_THROWS_AS(SemanticMemory::restore(junk, 10), DataError);
}

TEST_CASE("semantic retention keeps structural diversity a score-only list loses") {
  // Score-only policy: flat top-2 by score, no similarity test.
  struct ScoreOnly {
    std::vector<std::pair<std::string, double>> top;
    void insert(const std::string& e, double s) {
      top.emplace_back(e, s);
      std::sort(top.begin(), top.end(),
                [](const auto& a, const auto& b) { return a.second > b.second; });
      if (top.size() > 2) top.resize(2);
    }
  };

  SemanticMemory mem(1);
  ScoreOnly flat;
  // Two near-duplicates with high scores, one distinct structure lower.
  const char* a1 = "params[0]*sin(x)";
  const char* a2 = "params[0]*sin(x)+params[1]";
  const char* b = "params[0]*x*v";
  for (auto [e, s] : {std::pair{a1, 5.0}, {a2, 4.9}, {b, 2.0}}) {
    mem.insert(0, cand(e, s));
    flat.insert(e, s);
  }
  // The flat list holds the two sin variants only.
  CHECK(flat.top[0].second == 5.0);
  CHECK(flat.top[1].second == 4.9);
  // Semantic memory keeps the structurally distinct product as its own elite.
  bool has_product = false;
  for (const auto& cl : mem.island(0).clusters)
    if (render(cl.elite.skeleton) == canonical_render(parse(b))) has_product = true;
  CHECK(has_product);
}
