#pragma once

// Generation ports: prompt construction for the proposer / critic / executor
// roles, output parsing back into skeletons and edit actions, the Bernoulli
// critic trigger, and two Provider implementations (scripted replay and HTTP
// chat endpoint). Prompt builders are pure string assembly: byte-identical
// output for identical inputs.

#include "eqdisc/common.hpp"
#include "eqdisc/expr.hpp"
#include "eqdisc/hints.hpp"
#include "eqdisc/score.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace eqdisc {

// Problem statement handed to every prompt. Variable names must match the
// dataset columns; the loop validates that before running.
struct TaskSpec {
  std::string description;
  std::vector<std::string> variables;
  std::vector<std::string> variable_descriptions;  // optional, aligned with variables
  std::vector<std::string> operators;  // allowed set; empty = full grammar
  std::string target = "y";
};

struct Message {
  std::string role;
  std::string content;
};

struct Prompt {
  std::vector<Message> messages;
  int iteration = 0;
  bool hint_included = false;
};

// Elite equation shown to the proposer.
struct Exemplar {
  std::string expression;
  double score = 0.0;
};

enum class CriticVerb { Remove, Simplify, Add };

inline const char* verb_name(CriticVerb v) {
  switch (v) {
    case CriticVerb::Remove: return "Remove";
    case CriticVerb::Simplify: return "Simplify";
    case CriticVerb::Add: return "Add";
  }
  return "?";
}

// One edit instruction. Remove/Simplify carry a target subexpression that is
// known to occur in the base skeleton; Add carries a new fragment.
struct CriticAction {
  CriticVerb verb = CriticVerb::Remove;
  std::string target;    // Remove / Simplify
  std::string proposal;  // Add
  std::string rationale;
};

namespace detail {

inline std::string lower_copy(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string fmt_g6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string grammar_block(const TaskSpec& task) {
  std::ostringstream out;
  out << "Expression grammar:\n"
      << "- binary operators: + - * / ^, plus unary minus\n"
      << "- functions: ";
  if (task.operators.empty()) {
    bool first = true;
    for (const auto& f : function_names()) {
      if (!first) out << " ";
      out << f;
      first = false;
    }
  } else {
    for (std::size_t i = 0; i < task.operators.size(); ++i)
      out << (i ? " " : "") << task.operators[i];
  }
  out << "\n"
      << "- unknown constants: params[0], params[1], ... with contiguous indices from 0\n"
      << "- variables: ";
  for (std::size_t i = 0; i < task.variables.size(); ++i) {
    if (i) out << ", ";
    out << task.variables[i];
    if (i < task.variable_descriptions.size() && !task.variable_descriptions[i].empty())
      out << " (" << task.variable_descriptions[i] << ")";
  }
  out << "\n- numeric literals are allowed\n";
  return out.str();
}

inline std::string variables_line(const TaskSpec& task) {
  std::ostringstream out;
  for (std::size_t i = 0; i < task.variables.size(); ++i) {
    if (i) out << ", ";
    out << task.variables[i];
    if (i < task.variable_descriptions.size() && !task.variable_descriptions[i].empty())
      out << " (" << task.variable_descriptions[i] << ")";
  }
  return out.str();
}

inline const char* action_schema_block() {
  return
      "Respond with one action per line, formatted exactly as:\n"
      "VERB | target-or-proposal | rationale\n"
      "VERB is one of Remove, Simplify, Add. For Remove and Simplify the middle\n"
      "field must be a subexpression of the candidate; for Add it is a new\n"
      "fragment to incorporate. Output nothing but action lines.\n";
}

}  // namespace detail

// Proposer prompt: grammar + task text + up to 2 elites + the data hint on
// hint-period iterations (iteration % period == 0, including the cold start).
inline Prompt build_sampler_prompt(const TaskSpec& task, const std::vector<Exemplar>& elites,
                                   const DataHint* hint, int iteration, int hint_period = 25) {
  Prompt p;
  p.iteration = iteration;
  p.hint_included = hint != nullptr && hint_period > 0 && iteration % hint_period == 0;

  std::ostringstream sys;
  sys << "You propose candidate equations for symbolic regression. Model the target "
      << task.target << " as a function of the given variables.\n"
      << detail::grammar_block(task);
  p.messages.push_back({"system", sys.str()});

  std::ostringstream user;
  user << "Task: " << task.description << "\n";
  const std::size_t n_elites = std::min<std::size_t>(elites.size(), 2);
  if (n_elites > 0) {
    user << "\nBest equations found so far:\n";
    for (std::size_t i = 0; i < n_elites; ++i)
      user << "  score=" << detail::fmt_g6(elites[i].score) << "  " << elites[i].expression
           << "\n";
  }
  if (p.hint_included) user << "\nData analysis of the training set:\n" << render_hint(*hint);
  user << "\nPropose 4 candidate equation skeletons, one per line, using params[k] for "
          "unknown constants. Output only the equations.\n";
  p.messages.push_back({"user", user.str()});
  return p;
}

// Critic prompt: candidate expression, fitted parameters (round-trip exact),
// score feedback, input variables, task description, and the action schema.
inline Prompt build_critic_prompt(const ScoredCandidate& base, const TaskSpec& task,
                                  int iteration = 0) {
  Prompt p;
  p.iteration = iteration;

  std::ostringstream sys;
  sys << "You critique a fitted candidate equation and propose structural edits.\n"
      << detail::action_schema_block();
  p.messages.push_back({"system", sys.str()});

  std::ostringstream user;
  user << "Candidate: " << render(base.skeleton) << "\n";
  user << "Fitted parameters: ";
  if (base.fit.theta.size() == 0) {
    user << "none";
  } else {
    for (Eigen::Index i = 0; i < base.fit.theta.size(); ++i) {
      if (i) user << "; ";
      user << "params[" << i << "]=" << format_double(base.fit.theta[i]);
    }
  }
  user << "\n";
  user << "Score: " << detail::fmt_g6(base.score) << " (NMSE " << detail::fmt_g6(base.fit.nmse)
       << ", effective parameters " << base.complexity.n_eff << ", sensitivity "
       << detail::fmt_g6(base.complexity.c_sens) << ", curvature "
       << detail::fmt_g6(base.complexity.c_curv) << ")\n";
  user << "Variables: " << detail::variables_line(task) << "\n";
  user << "Task: " << task.description << "\n";
  p.messages.push_back({"user", user.str()});
  return p;
}

// Executor prompt: base skeleton plus the accepted edit actions; output is
// constrained to the grammar, at most 4 revisions, each a real change.
inline Prompt build_executor_prompt(const Skeleton& base, const std::vector<CriticAction>& actions,
                                    const TaskSpec& task, int iteration = 0) {
  Prompt p;
  p.iteration = iteration;

  std::ostringstream sys;
  sys << "You apply edit actions to a candidate equation.\n"
      << detail::grammar_block(task)
      << "Output up to 4 revised equation skeletons, one per line. Each revision must "
         "apply one or more of the listed actions and must differ from the base. "
         "Output only the equations.\n";
  p.messages.push_back({"system", sys.str()});

  std::ostringstream user;
  user << "Base: " << render(base) << "\n";
  user << "Actions:\n";
  for (const CriticAction& a : actions) {
    user << "  " << verb_name(a.verb) << " | "
         << (a.verb == CriticVerb::Add ? a.proposal : a.target) << " | " << a.rationale << "\n";
  }
  p.messages.push_back({"user", user.str()});
  return p;
}

// ---------------------------------------------------------------------------
// Output parsing

struct CandidateParse {
  std::vector<Skeleton> skeletons;          // canonical, deduplicated, input order
  std::vector<std::string> diagnostics;     // one entry per rejected line
};

namespace detail {

// Strips "1. ", "2) ", "* " style list markers. "- " is left alone: a leading
// minus is valid unary negation. Markers require a following space so decimal
// literals like "2.5*x" survive.
inline std::string strip_list_marker(const std::string& line) {
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i + 1 < line.size() && (line[i] == '.' || line[i] == ')') && line[i + 1] == ' ')
    return trim_copy(line.substr(i + 2));
  if (line.size() > 2 && line[0] == '*' && line[1] == ' ') return trim_copy(line.substr(2));
  return line;
}

inline std::vector<std::string> candidate_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  const bool fenced = text.find("```") != std::string::npos;
  bool in_fence = false;
  while (std::getline(in, line)) {
    const std::string t = trim_copy(line);
    if (t.rfind("```", 0) == 0) {
      in_fence = !in_fence;
      continue;
    }
    if (fenced && !in_fence) continue;
    if (t.empty()) continue;
    lines.push_back(t);
  }
  return lines;
}

}  // namespace detail

// Extracts expression candidates from free-form generator output. Fenced
// blocks, when present, are authoritative; otherwise every nonempty line is
// tried. Lines of the form "name = expr" contribute their right-hand side.
// Unparseable lines become diagnostics; duplicates collapse by canonical form.
inline CandidateParse parse_candidates(const std::string& text) {
  CandidateParse out;
  std::set<std::string> seen;
  for (const std::string& raw : detail::candidate_lines(text)) {
    std::string expr_text = detail::strip_list_marker(raw);
    const std::size_t eq = expr_text.find('=');
    if (eq != std::string::npos) expr_text = detail::trim_copy(expr_text.substr(eq + 1));
    if (expr_text.empty()) {
      out.diagnostics.push_back(raw + ": empty after cleanup");
      continue;
    }
    try {
      Skeleton s = canonicalize(parse(expr_text));
      const std::string key = render(s);
      if (seen.insert(key).second) out.skeletons.push_back(std::move(s));
    } catch (const ParseError& e) {
      out.diagnostics.push_back(raw + ": " + e.what());
    }
  }
  return out;
}

// Critic gate. Deterministic core: fires iff the score is strictly positive
// and the uniform draw lands below pi_c.
inline bool trigger_critic(double score, double pi_c, double draw) {
  return score > 0.0 && draw < pi_c;
}

// RNG wrapper; always consumes exactly one draw so the stream advance does
// not depend on the score.
inline bool trigger_critic(double score, double pi_c, std::mt19937_64& rng) {
  const double draw = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return trigger_critic(score, pi_c, draw);
}

struct ActionParse {
  std::vector<CriticAction> actions;
  std::vector<std::string> diagnostics;
};

// Parses "VERB | field | rationale" lines. Unknown verbs are rejected;
// Remove/Simplify targets must parse and occur inside the base skeleton (up
// to canonical form); Add proposals must parse as grammar fragments.
inline ActionParse parse_critic_actions(const std::string& text, const Skeleton& base) {
  ActionParse out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = detail::trim_copy(line);
    if (t.empty() || t.rfind("```", 0) == 0) continue;
    const std::size_t p1 = t.find('|');
    if (p1 == std::string::npos) {
      out.diagnostics.push_back(t + ": not an action line");
      continue;
    }
    const std::size_t p2 = t.find('|', p1 + 1);
    const std::string verb_text = detail::lower_copy(detail::trim_copy(t.substr(0, p1)));
    const std::string field = detail::trim_copy(
        p2 == std::string::npos ? t.substr(p1 + 1) : t.substr(p1 + 1, p2 - p1 - 1));
    const std::string rationale =
        p2 == std::string::npos ? std::string() : detail::trim_copy(t.substr(p2 + 1));

    CriticAction action;
    if (verb_text == "remove") {
      action.verb = CriticVerb::Remove;
    } else if (verb_text == "simplify") {
      action.verb = CriticVerb::Simplify;
    } else if (verb_text == "add") {
      action.verb = CriticVerb::Add;
    } else {
      out.diagnostics.push_back(t + ": unknown verb");
      continue;
    }
    if (field.empty()) {
      out.diagnostics.push_back(t + ": empty target");
      continue;
    }

    if (action.verb == CriticVerb::Add) {
      try {
        detail::Parser(field).parse();
      } catch (const ParseError& e) {
        out.diagnostics.push_back(t + ": proposal does not parse: " + e.what());
        continue;
      }
      action.proposal = field;
    } else {
      NodePtr frag;
      try {
        frag = detail::Parser(field).parse();
      } catch (const ParseError& e) {
        out.diagnostics.push_back(t + ": target does not parse: " + e.what());
        continue;
      }
      if (!contains_fragment(base, frag)) {
        out.diagnostics.push_back(t + ": target not found in candidate");
        continue;
      }
      action.target = field;
    }
    action.rationale = rationale;
    out.actions.push_back(std::move(action));
  }
  return out;
}

// Executor output: candidates that restate the base (canonically equal) are
// dropped; at most `max_revisions` survive.
inline CandidateParse parse_revisions(const std::string& text, const Skeleton& base,
                                      int max_revisions = 4) {
  CandidateParse parsed = parse_candidates(text);
  const std::string base_key = canonical_render(base);
  CandidateParse out;
  out.diagnostics = std::move(parsed.diagnostics);
  for (Skeleton& s : parsed.skeletons) {
    if (render(s) == base_key) {
      out.diagnostics.push_back(base_key + ": revision identical to base");
      continue;
    }
    if (static_cast<int>(out.skeletons.size()) < max_revisions)
      out.skeletons.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Providers

class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string generate(const Prompt& prompt) = 0;
};

// Replay provider: responses come from a UTF-8 stream, records separated by a
// line containing only "---". Calls are serialized; replay order is the
// contract. Exhaustion raises ReplayExhausted, which the loop maps to a
// partial result.
class ScriptedProvider : public Provider {
 public:
  explicit ScriptedProvider(std::istream& in) { load(in); }

  static ScriptedProvider from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ProviderError("cannot open replay file: " + path);
    return ScriptedProvider(in);
  }

  std::string generate(const Prompt&) override {
    std::lock_guard<std::mutex> lock(mu_);
    if (next_ >= records_.size())
      throw ReplayExhausted("replay script exhausted after " + std::to_string(records_.size()) +
                            " responses");
    return records_[next_++];
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.size();
  }
  std::size_t remaining() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.size() - next_;
  }

 private:
  void load(std::istream& in) {
    std::string line, current;
    bool any = false;
    auto push = [&]() {
      records_.push_back(current);
      current.clear();
      any = false;
    };
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line == "---") {
        push();
        continue;
      }
      if (!current.empty()) current += '\n';
      current += line;
      if (detail::trim_copy(line).size() > 0) any = true;
    }
    if (any) push();  // trailing record without a final separator
  }

  std::vector<std::string> records_;
  std::size_t next_ = 0;
  mutable std::mutex mu_;
};

struct HttpProviderConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/v1/chat/completions";
  std::string model = "local-model";
  double temperature = 0.7;
  std::string api_key_env;  // empty = unauthenticated endpoint
  int max_attempts = 3;
  int backoff_ms = 250;  // doubles after each failed attempt
  int timeout_sec = 120;
};

// Chat-endpoint client. Each generate() builds a fresh connection, so
// concurrent in-flight calls are safe. Transient failures retry with
// exponential backoff; persistent failure raises ProviderError and the loop
// skips the candidate batch.
class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.api_key_env.empty()) {
      const char* key = std::getenv(cfg_.api_key_env.c_str());
      if (key == nullptr || *key == '\0')
        throw ProviderError("environment variable " + cfg_.api_key_env + " is not set");
      api_key_ = key;
    }
  }

  std::string generate(const Prompt& prompt) override {
    nlohmann::json body;
    body["model"] = cfg_.model;
    body["temperature"] = cfg_.temperature;
    body["messages"] = nlohmann::json::array();
    for (const Message& m : prompt.messages)
      body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    const std::string payload = body.dump();

    std::string last_error = "no attempts made";
    for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(
            std::chrono::milliseconds(static_cast<long>(cfg_.backoff_ms) << (attempt - 1)));
      httplib::Client client(cfg_.host, cfg_.port);
      client.set_connection_timeout(cfg_.timeout_sec, 0);
      client.set_read_timeout(cfg_.timeout_sec, 0);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      auto res = client.Post(cfg_.path, headers, payload, "application/json");
      if (!res) {
        last_error = "connection failure";
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP status " + std::to_string(res->status);
        continue;
      }
      try {
        const nlohmann::json reply = nlohmann::json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        last_error = std::string("malformed response: ") + e.what();
      }
    }
    throw ProviderError("generation failed after " + std::to_string(cfg_.max_attempts) +
                        " attempts: " + last_error);
  }

 private:
  HttpProviderConfig cfg_;
  std::string api_key_;
};

}  // namespace eqdisc
