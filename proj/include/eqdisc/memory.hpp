#pragma once

// Multi-island experience buffer. Stored equations are clustered by TF-IDF
// cosine similarity over canonical-form token bags; each cluster keeps only
// its highest-scoring elite. Document frequencies are global across islands
// and updated incrementally on every insert / replace / reject.

#include "eqdisc/common.hpp"
#include "eqdisc/expr.hpp"
#include "eqdisc/score.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace eqdisc {

using TfIdfVector = std::map<std::string, double>;

struct CorpusStats {
  std::map<std::string, int> df;
  int total_docs = 0;
};

// weight(t) = tf(t) * ln(N / df(t)), natural log, raw counts. Tokens present
// in every document get weight zero.
inline TfIdfVector tfidf_vector(const TokenBag& bag, const CorpusStats& stats) {
  TfIdfVector v;
  if (stats.total_docs <= 0) return v;
  for (const auto& [token, tf] : bag) {
    auto it = stats.df.find(token);
    if (it == stats.df.end() || it->second <= 0) continue;
    v[token] = tf * std::log(static_cast<double>(stats.total_docs) / it->second);
  }
  return v;
}

inline double cosine_sim(const TfIdfVector& u, const TfIdfVector& v) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (const auto& [t, w] : u) {
    nu += w * w;
    auto it = v.find(t);
    if (it != v.end()) dot += w * it->second;
  }
  for (const auto& [t, w] : v) nv += w * w;
  if (nu <= 0.0 || nv <= 0.0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

struct Cluster {
  ScoredCandidate elite;
  TokenBag bag;
};

struct Island {
  std::vector<Cluster> clusters;
};

enum class InsertOutcome { Replaced, Kept, NewCluster };

class SemanticMemory {
public:
  explicit SemanticMemory(int n_islands = 10) : islands_(static_cast<size_t>(n_islands)) {}

  int island_count() const { return static_cast<int>(islands_.size()); }
  const Island& island(int i) const { return islands_.at(static_cast<size_t>(i)); }
  const CorpusStats& stats() const { return stats_; }

  bool empty() const {
    for (const auto& isl : islands_)
      if (!isl.clusters.empty()) return false;
    return true;
  }

  int cluster_count() const {
    int c = 0;
    for (const auto& isl : islands_) c += static_cast<int>(isl.clusters.size());
    return c;
  }

  // Best cluster for a bag whose document is already counted in the stats.
  // Returns the max-similarity cluster index if that similarity is strictly
  // above 0.9, else -1 (new cluster). Identical bags count as similarity 1
  // directly: in a tiny corpus every shared token can have df = N, zeroing
  // both vectors, and an identical equation must still find its own cluster.
  int assign_cluster(int island, const TokenBag& bag) const {
    const auto& clusters = islands_.at(static_cast<size_t>(island)).clusters;
    const TfIdfVector incoming = tfidf_vector(bag, stats_);
    int best = -1;
    double best_sim = 0.0;
    for (size_t i = 0; i < clusters.size(); ++i) {
      const double sim = (clusters[i].bag == bag)
                             ? 1.0
                             : cosine_sim(incoming, tfidf_vector(clusters[i].bag, stats_));
      if (sim > best_sim) {
        best_sim = sim;
        best = static_cast<int>(i);
      }
    }
    return best_sim > 0.9 ? best : -1;
  }

  // Insert protocol: count the incoming document, assign its cluster, then
  // keep the higher-scoring of (incoming, incumbent). The loser's document
  // leaves the corpus stats so stats always describe exactly the stored bags.
  InsertOutcome insert(int island, const ScoredCandidate& cand) {
    if (!std::isfinite(cand.score)) throw DataError("insert: non-finite score rejected");
    auto& clusters = islands_.at(static_cast<size_t>(island)).clusters;
    const TokenBag bag = tokenize(cand.skeleton);
    add_doc(bag);
    const int cid = assign_cluster(island, bag);
    if (cid < 0) {
      clusters.push_back({cand, bag});
      return InsertOutcome::NewCluster;
    }
    Cluster& c = clusters[static_cast<size_t>(cid)];
    if (cand.score > c.elite.score) {
      remove_doc(c.bag);
      c = {cand, bag};
      return InsertOutcome::Replaced;
    }
    remove_doc(bag);
    return InsertOutcome::Kept;
  }

  // Softmax over signature (elite) scores with max-subtraction.
  std::vector<double> cluster_probabilities(int island, double tau = 0.1) const {
    const auto& clusters = islands_.at(static_cast<size_t>(island)).clusters;
    std::vector<double> p(clusters.size(), 0.0);
    if (clusters.empty()) return p;
    double mx = -kInf;
    for (const auto& c : clusters) mx = std::max(mx, c.elite.score);
    double sum = 0.0;
    for (size_t i = 0; i < clusters.size(); ++i) {
      p[i] = std::exp((clusters[i].elite.score - mx) / tau);
      sum += p[i];
    }
    for (auto& x : p) x /= sum;
    return p;
  }

  // Exemplar retrieval: one island uniform among nonempty, then up to k
  // cluster elites sampled without replacement by score softmax (tau = 0.1).
  std::vector<ScoredCandidate> sample_exemplars(std::mt19937_64& rng, int k = 2,
                                                double tau = 0.1,
                                                int* island_out = nullptr) const {
    std::vector<int> nonempty;
    for (size_t i = 0; i < islands_.size(); ++i)
      if (!islands_[i].clusters.empty()) nonempty.push_back(static_cast<int>(i));
    if (island_out) *island_out = -1;
    if (nonempty.empty()) return {};

    const int island =
        nonempty[std::uniform_int_distribution<size_t>(0, nonempty.size() - 1)(rng)];
    if (island_out) *island_out = island;
    const auto& clusters = islands_[static_cast<size_t>(island)].clusters;

    std::vector<size_t> remaining(clusters.size());
    for (size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
    std::vector<ScoredCandidate> out;
    std::uniform_real_distribution<double> U(0.0, 1.0);
    while (!remaining.empty() && static_cast<int>(out.size()) < k) {
      double mx = -kInf;
      for (size_t idx : remaining) mx = std::max(mx, clusters[idx].elite.score);
      std::vector<double> w(remaining.size());
      double sum = 0.0;
      for (size_t j = 0; j < remaining.size(); ++j) {
        w[j] = std::exp((clusters[remaining[j]].elite.score - mx) / tau);
        sum += w[j];
      }
      const double u = U(rng) * sum;
      double acc = 0.0;
      size_t pick = remaining.size() - 1;
      for (size_t j = 0; j < remaining.size(); ++j) {
        acc += w[j];
        if (u <= acc) {
          pick = j;
          break;
        }
      }
      out.push_back(clusters[remaining[pick]].elite);
      remaining.erase(remaining.begin() + static_cast<long>(pick));
    }
    return out;
  }

  // One JSON record per stored elite: island, cluster, canonical expression,
  // fitted parameters, score. The restore path rebuilds token bags and corpus
  // stats from the expressions alone.
  void dump(std::ostream& os) const {
    for (size_t i = 0; i < islands_.size(); ++i) {
      for (size_t c = 0; c < islands_[i].clusters.size(); ++c) {
        const auto& elite = islands_[i].clusters[c].elite;
        nlohmann::json rec;
        rec["island"] = i;
        rec["cluster"] = c;
        rec["expr"] = render(elite.skeleton);
        std::vector<double> theta(elite.fit.theta.data(),
                                  elite.fit.theta.data() + elite.fit.theta.size());
        rec["theta"] = theta;
        rec["score"] = elite.score;
        os << rec.dump() << "\n";
      }
    }
  }

  static SemanticMemory restore(std::istream& is, int n_islands = 10) {
    struct Record {
      int island, cluster;
      ScoredCandidate cand;
    };
    std::vector<Record> records;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw DataError("memory record line " + std::to_string(lineno) + ": " + e.what());
      }
      Record r;
      try {
        r.island = rec.at("island").get<int>();
        r.cluster = rec.at("cluster").get<int>();
        r.cand.skeleton = parse(rec.at("expr").get<std::string>());
        const auto theta = rec.at("theta").get<std::vector<double>>();
        r.cand.fit.theta =
            Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
        r.cand.fit.nmse = kNaN;  // not carried by the dump format
        r.cand.score = rec.at("score").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw DataError("memory record line " + std::to_string(lineno) + ": " + e.what());
      } catch (const ParseError& e) {
        throw DataError("memory record line " + std::to_string(lineno) + ": " + e.what());
      }
      if (r.island < 0 || r.island >= n_islands)
        throw DataError("memory record line " + std::to_string(lineno) + ": island out of range");
      if (r.cand.fit.theta.size() != r.cand.skeleton.param_count)
        throw DataError("memory record line " + std::to_string(lineno) + ": theta arity mismatch");
      records.push_back(std::move(r));
    }
    std::stable_sort(records.begin(), records.end(), [](const Record& a, const Record& b) {
      if (a.island != b.island) return a.island < b.island;
      return a.cluster < b.cluster;
    });
    SemanticMemory mem(n_islands);
    for (auto& r : records) {
      auto& clusters = mem.islands_[static_cast<size_t>(r.island)].clusters;
      if (r.cluster != static_cast<int>(clusters.size()))
        throw DataError("memory dump: cluster ids not contiguous in island " +
                        std::to_string(r.island));
      TokenBag bag = tokenize(r.cand.skeleton);
      mem.add_doc(bag);
      clusters.push_back({std::move(r.cand), std::move(bag)});
    }
    return mem;
  }

private:
  std::vector<Island> islands_;
  CorpusStats stats_;

  void add_doc(const TokenBag& bag) {
    ++stats_.total_docs;
    for (const auto& [token, tf] : bag) {
      (void)tf;
      ++stats_.df[token];
    }
  }

  void remove_doc(const TokenBag& bag) {
    --stats_.total_docs;
    for (const auto& [token, tf] : bag) {
      (void)tf;
      auto it = stats_.df.find(token);
      if (it != stats_.df.end() && --it->second <= 0) stats_.df.erase(it);
    }
  }
};

}  // namespace eqdisc
