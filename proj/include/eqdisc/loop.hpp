#pragma once

// The discovery loop: sample exemplars from memory, prompt the proposer, fit
// and score each candidate, optionally run the critic/executor repair pass,
// commit the survivor to semantic memory, and track the best equation until
// the evaluation budget, the early-stop threshold, or the provider runs out.
//
// Determinism contract: given the same config (seed included) and a scripted
// provider, two runs produce byte-identical traces. All randomness flows
// through one generator in a fixed order: per batch, fit seeds are drawn
// first (candidates in response order), then per committed candidate the
// critic trigger draw, any reflection fit seeds, and the insertion island.
// Batch fits run concurrently but their seeds are pre-drawn and their results
// are consumed strictly in batch order.

#include "eqdisc/agents.hpp"
#include "eqdisc/common.hpp"
#include "eqdisc/expr.hpp"
#include "eqdisc/fit.hpp"
#include "eqdisc/hints.hpp"
#include "eqdisc/memory.hpp"
#include "eqdisc/score.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <future>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace eqdisc {

struct RunConfig {
  long budget = 2000;      // full candidate evaluations (batch + reflection finalists)
  int batch_size = 4;      // candidates requested and evaluated per prompt
  int islands = 10;
  int exemplars = 2;
  double pi_c = 0.4;       // critic trigger probability; 0 disables reflection
  double tau_c = 0.1;      // softmax temperature for exemplar retrieval
  int hint_period = 25;    // data hint included every this many prompts
  double early_stop_nmse = 1e-13;
  double screening_fraction = 0.2;  // of train rows for reflection screening, capped at 200
  double finalist_gap = 0.01;       // runner-up joins finalists below this relative gap
  long screening_evals = 2000;      // objective-evaluation cap per screening fit
  int max_consecutive_failures = 10;  // provider failures / empty batches before giving up
  uint64_t seed = 0;

  void validate() const {
    if (budget <= 0 || batch_size <= 0 || islands <= 0 || exemplars <= 0 || hint_period <= 0 ||
        screening_evals <= 0 || max_consecutive_failures <= 0)
      throw ParseError("config: counts must be positive");
    if (budget < batch_size) throw ParseError("config: budget must be at least batch_size");
    if (pi_c < 0.0 || pi_c > 1.0) throw ParseError("config: pi_c must lie in [0,1]");
    if (tau_c <= 0.0) throw ParseError("config: tau_c must be positive");
    if (screening_fraction <= 0.0 || screening_fraction > 1.0)
      throw ParseError("config: screening_fraction must lie in (0,1]");
    if (finalist_gap < 0.0) throw ParseError("config: finalist_gap must be nonnegative");
    if (!(early_stop_nmse > 0.0)) throw ParseError("config: early_stop_nmse must be positive");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"budget", budget},
                          {"batch_size", batch_size},
                          {"islands", islands},
                          {"exemplars", exemplars},
                          {"pi_c", pi_c},
                          {"tau_c", tau_c},
                          {"hint_period", hint_period},
                          {"early_stop_nmse", early_stop_nmse},
                          {"screening_fraction", screening_fraction},
                          {"finalist_gap", finalist_gap},
                          {"screening_evals", screening_evals},
                          {"max_consecutive_failures", max_consecutive_failures},
                          {"seed", seed}};
  }

  // Strict field-for-field mirror of to_json: unknown keys are rejected so
  // config typos fail loudly instead of silently running defaults.
  static RunConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("config: expected a JSON object");
    RunConfig c;
    try {
      for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "budget") c.budget = it.value().get<long>();
        else if (k == "batch_size") c.batch_size = it.value().get<int>();
        else if (k == "islands") c.islands = it.value().get<int>();
        else if (k == "exemplars") c.exemplars = it.value().get<int>();
        else if (k == "pi_c") c.pi_c = it.value().get<double>();
        else if (k == "tau_c") c.tau_c = it.value().get<double>();
        else if (k == "hint_period") c.hint_period = it.value().get<int>();
        else if (k == "early_stop_nmse") c.early_stop_nmse = it.value().get<double>();
        else if (k == "screening_fraction") c.screening_fraction = it.value().get<double>();
        else if (k == "finalist_gap") c.finalist_gap = it.value().get<double>();
        else if (k == "screening_evals") c.screening_evals = it.value().get<long>();
        else if (k == "max_consecutive_failures") c.max_consecutive_failures = it.value().get<int>();
        else if (k == "seed") c.seed = it.value().get<uint64_t>();
        else throw ParseError("config: unknown field \"" + k + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

enum class StopReason { BudgetExhausted, EarlyStop, ProviderExhausted };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::BudgetExhausted: return "BudgetExhausted";
    case StopReason::EarlyStop: return "EarlyStop";
    case StopReason::ProviderExhausted: return "ProviderExhausted";
  }
  return "?";
}

inline const char* fit_path_name(FitPath p) {
  return p == FitPath::Mixed ? "mixed" : "fallback";
}

// One line per committed candidate. Failed fits keep the non-finite
// sentinels; trace serialization turns those into JSON nulls.
struct TraceRecord {
  int iteration = 0;
  std::string expression;
  std::vector<double> theta;
  double nmse = kInf;
  double score = -kInf;
  std::string path;  // "mixed", "fallback", or "failed"
  bool reflected = false;  // the repair pass ran for this candidate
};

struct DiscoveryResult {
  std::optional<ScoredCandidate> best;
  std::vector<TraceRecord> trace;
  StopReason stop = StopReason::BudgetExhausted;
  long full_evaluations = 0;       // counted against config.budget
  long screening_evaluations = 0;  // reflection screening fits, at most 4 per reflection
  int iterations = 0;              // prompts answered by the provider
  SemanticMemory memory{10};
};

struct ReflectStats {
  long screening_fits = 0;
  long full_fits = 0;
  int provider_errors = 0;
  bool replay_exhausted = false;
};

// Critic -> executor -> two-stage reevaluation. Screening fits each revision
// on a row subset with one optimizer start and a capped evaluation budget;
// the top revision (plus the runner-up when the relative score gap is below
// config.finalist_gap) is refitted on the full split. Returns the best of
// base and finalists, never a degradation. Provider trouble inside the pass
// degrades to returning the base unchanged.
inline ScoredCandidate reflect(const ScoredCandidate& base, const SplitBlock& train,
                               const TaskSpec& task, Provider& provider, std::mt19937_64& rng,
                               const RunConfig& config, long budget_remaining,
                               ReflectStats* stats_out = nullptr) {
  ReflectStats local;
  ReflectStats& st = stats_out ? *stats_out : local;

  std::string critic_text;
  try {
    critic_text = provider.generate(build_critic_prompt(base, task));
  } catch (const ReplayExhausted&) {
    st.replay_exhausted = true;
    return base;
  } catch (const ProviderError&) {
    ++st.provider_errors;
    return base;
  }
  const ActionParse actions = parse_critic_actions(critic_text, base.skeleton);
  if (actions.actions.empty()) return base;

  std::string exec_text;
  try {
    exec_text = provider.generate(build_executor_prompt(base.skeleton, actions.actions, task));
  } catch (const ReplayExhausted&) {
    st.replay_exhausted = true;
    return base;
  } catch (const ProviderError&) {
    ++st.provider_errors;
    return base;
  }
  const CandidateParse revisions = parse_revisions(exec_text, base.skeleton, 4);
  if (revisions.skeletons.empty()) return base;

  const long n_rows = train.y.size();
  long n_screen = std::min<long>(std::lround(config.screening_fraction * static_cast<double>(n_rows)), 200);
  n_screen = std::max<long>(1, std::min(n_screen, n_rows));
  Frame sub;
  sub.columns = train.inputs.columns;
  sub.X = train.inputs.X.topRows(n_screen);
  const Eigen::VectorXd sub_y = train.y.head(n_screen);
  if (population_variance(sub_y) <= 0.0) return base;  // subset degenerate, nothing to rank on

  std::vector<double> screen_scores(revisions.skeletons.size(), -kInf);
  for (std::size_t i = 0; i < revisions.skeletons.size(); ++i) {
    FitOptions so;
    so.n_starts = 1;
    so.seed = rng();
    so.max_total_evals = config.screening_evals;
    ++st.screening_fits;
    try {
      if (auto sc = evaluate_candidate(revisions.skeletons[i], sub, sub_y, so))
        screen_scores[i] = sc->score;
    } catch (const std::exception&) {
      // unknown variables and other per-candidate defects just lose the screen
    }
  }

  std::vector<std::size_t> order(screen_scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return screen_scores[a] > screen_scores[b]; });
  if (!std::isfinite(screen_scores[order[0]])) return base;

  std::vector<std::size_t> finalists{order[0]};
  if (order.size() > 1 && std::isfinite(screen_scores[order[1]])) {
    const double top = screen_scores[order[0]];
    const double second = screen_scores[order[1]];
    const double rel_gap = (top - second) / std::max(std::abs(top), 1e-12);
    if (rel_gap < config.finalist_gap) finalists.push_back(order[1]);
  }

  ScoredCandidate best = base;
  for (std::size_t idx : finalists) {
    if (st.full_fits >= budget_remaining) break;
    FitOptions fo;
    fo.seed = rng();
    ++st.full_fits;
    try {
      if (auto full = evaluate_candidate(revisions.skeletons[idx], train.inputs, train.y, fo))
        if (full->score > best.score) best = *full;
    } catch (const std::exception&) {
    }
  }
  return best;
}

// Full search. Preconditions: nonempty train split with Var(y) > 0; task
// variables (when given) must name dataset columns. Budget counts full-split
// candidate evaluations; reflection screening is tracked separately. Replay
// exhaustion and persistent provider failure end the run with the partial
// result accumulated so far.
inline DiscoveryResult run(const RunConfig& config, const SplitBlock& train,
                           const TaskSpec& task_in, Provider& provider) {
  config.validate();
  if (train.inputs.rows() == 0 || train.y.size() == 0)
    throw DataError("run: empty training split");
  if (train.inputs.rows() != train.y.size()) throw DataError("run: row count mismatch");
  if (population_variance(train.y) <= 0.0) throw DataError("run: degenerate target, Var(y) = 0");

  TaskSpec task = task_in;
  if (task.variables.empty()) {
    task.variables = train.inputs.columns;
  } else {
    for (const std::string& v : task.variables)
      if (train.inputs.column_index(v) < 0)
        throw DataError("run: task variable \"" + v + "\" is not a dataset column");
  }

  const DataHint hint = build_data_hint(train.inputs, train.y);

  DiscoveryResult result;
  result.memory = SemanticMemory(config.islands);
  std::mt19937_64 rng(config.seed);
  int consecutive_failures = 0;
  int iteration = 0;
  bool stopped = false;

  while (!stopped) {
    if (result.full_evaluations >= config.budget) {
      result.stop = StopReason::BudgetExhausted;
      break;
    }
    if (consecutive_failures >= config.max_consecutive_failures) {
      result.stop = StopReason::ProviderExhausted;
      break;
    }

    std::vector<Exemplar> elites;
    for (const ScoredCandidate& e : result.memory.sample_exemplars(rng, config.exemplars, config.tau_c))
      elites.push_back({render(e.skeleton), e.score});

    const Prompt prompt = build_sampler_prompt(task, elites, &hint, iteration, config.hint_period);
    std::string text;
    try {
      text = provider.generate(prompt);
    } catch (const ReplayExhausted&) {
      result.stop = StopReason::ProviderExhausted;
      break;
    } catch (const ProviderError&) {
      ++consecutive_failures;
      continue;
    }
    const int it = iteration++;

    const CandidateParse parsed = parse_candidates(text);
    const long room = config.budget - result.full_evaluations;
    const std::size_t take = std::min<std::size_t>(
        {parsed.skeletons.size(), static_cast<std::size_t>(config.batch_size),
         static_cast<std::size_t>(room)});
    if (take == 0) {
      ++consecutive_failures;
      continue;
    }
    consecutive_failures = 0;

    std::vector<uint64_t> fit_seeds(take);
    for (std::size_t i = 0; i < take; ++i) fit_seeds[i] = rng();

    std::vector<std::future<std::optional<ScoredCandidate>>> futures;
    futures.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
      const Skeleton& skel = parsed.skeletons[i];
      const uint64_t seed = fit_seeds[i];
      futures.push_back(std::async(std::launch::async, [&train, &skel, seed] {
        FitOptions o;
        o.seed = seed;
        try {
          return evaluate_candidate(skel, train.inputs, train.y, o);
        } catch (const std::exception&) {
          return std::optional<ScoredCandidate>();
        }
      }));
    }

    for (std::size_t i = 0; i < take && !stopped; ++i) {
      std::optional<ScoredCandidate> cand = futures[i].get();
      ++result.full_evaluations;

      if (!cand) {
        TraceRecord rec;
        rec.iteration = it;
        rec.expression = render(parsed.skeletons[i]);
        rec.path = "failed";
        result.trace.push_back(std::move(rec));
        continue;
      }

      bool reflected = false;
      bool exhausted_in_reflection = false;
      if (cand->fit.nmse >= config.early_stop_nmse &&
          trigger_critic(cand->score, config.pi_c, rng)) {
        ReflectStats rs;
        const ScoredCandidate improved =
            reflect(*cand, train, task, provider, rng, config,
                    config.budget - result.full_evaluations, &rs);
        result.screening_evaluations += rs.screening_fits;
        result.full_evaluations += rs.full_fits;
        reflected = true;
        exhausted_in_reflection = rs.replay_exhausted;
        cand = improved;
      }

      const int island =
          std::uniform_int_distribution<int>(0, config.islands - 1)(rng);
      result.memory.insert(island, *cand);

      TraceRecord rec;
      rec.iteration = it;
      rec.expression = render(cand->skeleton);
      rec.theta.assign(cand->fit.theta.data(), cand->fit.theta.data() + cand->fit.theta.size());
      rec.nmse = cand->fit.nmse;
      rec.score = cand->score;
      rec.path = fit_path_name(cand->fit.path);
      rec.reflected = reflected;
      result.trace.push_back(std::move(rec));

      if (!result.best || cand->score > result.best->score) result.best = *cand;

      if (cand->fit.nmse < config.early_stop_nmse) {
        result.stop = StopReason::EarlyStop;
        stopped = true;
      } else if (exhausted_in_reflection) {
        result.stop = StopReason::ProviderExhausted;
        stopped = true;
      }
    }
  }

  result.iterations = iteration;
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json trace_record_json(const TraceRecord& r) {
  nlohmann::json j;
  j["iteration"] = r.iteration;
  j["expression"] = r.expression;
  j["theta"] = r.theta;
  j["nmse"] = std::isfinite(r.nmse) ? nlohmann::json(r.nmse) : nlohmann::json();
  j["score"] = std::isfinite(r.score) ? nlohmann::json(r.score) : nlohmann::json();
  j["path"] = r.path;
  j["reflected"] = r.reflected;
  return j;
}

// Line-delimited trace, one record per committed candidate, no timestamps:
// byte-identical across reruns of the same seeded scripted configuration.
inline void write_trace(std::ostream& out, const std::vector<TraceRecord>& trace) {
  for (const TraceRecord& r : trace) out << trace_record_json(r).dump() << "\n";
}

// Run summary. Deliberately timestamp-free; callers that want a wall-clock
// stamp add a "generated_at" field on top so determinism checks can strip it.
inline nlohmann::json report_json(const DiscoveryResult& res, const RunConfig& config) {
  nlohmann::json j;
  if (res.best) {
    nlohmann::json b;
    b["expression"] = render(res.best->skeleton);
    b["theta"] = std::vector<double>(res.best->fit.theta.data(),
                                     res.best->fit.theta.data() + res.best->fit.theta.size());
    b["nmse"] = res.best->fit.nmse;
    b["score"] = res.best->score;
    b["path"] = fit_path_name(res.best->fit.path);
    b["effective_params"] = res.best->complexity.n_eff;
    j["best"] = b;
  } else {
    j["best"] = nullptr;
  }
  j["stop_reason"] = stop_reason_name(res.stop);
  j["iterations"] = res.iterations;
  j["full_evaluations"] = res.full_evaluations;
  j["screening_evaluations"] = res.screening_evaluations;
  j["candidates"] = res.trace.size();
  j["config"] = config.to_json();
  return j;
}

}  // namespace eqdisc
