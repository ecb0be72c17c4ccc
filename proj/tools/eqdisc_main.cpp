// Command-line front end: discovery runs, one-off fits, fixed-equation
// evaluation, data hints, synthetic dataset generation, and memory dump
// inspection. Exit codes: 0 success, 2 usage/config error, 3 data error,
// 4 provider error.

#include "eqdisc/agents.hpp"
#include "eqdisc/bench.hpp"
#include "eqdisc/hints.hpp"
#include "eqdisc/loop.hpp"
#include "eqdisc/memory.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace eqdisc;

std::string iso_timestamp() {
  char buf[32];
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

Eigen::VectorXd parse_theta_list(const std::string& text) {
  std::vector<double> vals;
  std::stringstream in(text);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    const std::string t = detail::trim_copy(cell);
    if (t.empty()) throw ParseError("empty entry in theta list");
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0')
      throw ParseError("cannot parse theta entry \"" + t + "\"");
    vals.push_back(v);
  }
  return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

struct RunArgs {
  std::string config_path, train_path, id_path, ood_path, out_dir;
  std::string script_path;
  std::string task_description;
  // HTTP backend; used when no replay script is given.
  std::string http_host;
  int http_port = 8080;
  std::string http_path = "/v1/chat/completions";
  std::string http_model = "local-model";
  std::string http_key_env;
};

int cmd_run(const RunArgs& a) {
  const RunConfig config = RunConfig::from_json(read_json_file(a.config_path));

  Dataset ds;
  ds.train = load_csv(a.train_path, "y");
  ds.id_test = load_csv(a.id_path, "y");
  ds.ood_test = load_csv(a.ood_path, "y");
  ds.columns = ds.train.inputs.columns;
  if (ds.id_test.inputs.columns != ds.columns || ds.ood_test.inputs.columns != ds.columns)
    throw DataError("splits disagree on input columns");

  std::unique_ptr<Provider> provider;
  if (!a.script_path.empty() && !a.http_host.empty())
    throw ParseError("run takes one generation backend, not both: --script or --http-host");
  if (!a.script_path.empty()) {
    std::ifstream script(a.script_path);
    if (!script) throw ProviderError("cannot open replay file: " + a.script_path);
    provider = std::make_unique<ScriptedProvider>(script);
  } else if (!a.http_host.empty()) {
    HttpProviderConfig hc;
    hc.host = a.http_host;
    hc.port = a.http_port;
    hc.path = a.http_path;
    hc.model = a.http_model;
    hc.api_key_env = a.http_key_env;
    provider = std::make_unique<HttpProvider>(hc);
  } else {
    throw ParseError("run needs a generation backend: --script or --http-host");
  }

  TaskSpec task;
  task.description = a.task_description;

  ensure_dir(a.out_dir);
  const DiscoveryResult result = run(config, ds.train, task, *provider);

  std::ostringstream trace;
  write_trace(trace, result.trace);
  write_text_file(a.out_dir + "/trace.jsonl", trace.str());

  std::ostringstream memdump;
  result.memory.dump(memdump);
  write_text_file(a.out_dir + "/memory.jsonl", memdump.str());

  nlohmann::json report = report_json(result, config);
  if (result.best) {
    const MetricsReport metrics =
        evaluate_equation(result.best->skeleton, result.best->fit.theta, ds);
    report["metrics"] = metrics_json(metrics);
    std::cout << "best: " << render(result.best->skeleton) << "\n";
    std::cout << "accuracy epsilon: " << format_double(kAccEpsilon) << "\n";
    std::cout << metrics_table(metrics);
  } else {
    report["metrics"] = nullptr;
    std::cout << "no candidate survived fitting\n";
  }
  report["generated_at"] = iso_timestamp();
  write_text_file(a.out_dir + "/report.json", report.dump(2) + "\n");

  std::cout << "stop reason: " << stop_reason_name(result.stop) << "\n";
  std::cout << "iterations: " << result.iterations
            << ", full evaluations: " << result.full_evaluations
            << ", screening evaluations: " << result.screening_evaluations << "\n";
  std::cout << "report written to " << a.out_dir << "/report.json\n";
  return 0;
}

int cmd_fit(const std::string& skeleton_text, const std::string& data_path, uint64_t seed) {
  const Skeleton s = parse(skeleton_text);
  const SplitBlock block = load_csv(data_path, "y");
  FitOptions opts;
  opts.seed = seed;
  const auto cand = evaluate_candidate(s, block.inputs, block.y, opts);
  if (!cand) {
    std::cout << "fit failed: no finite parameterization found\n";
    return 0;
  }
  std::cout << "expression: " << render(cand->skeleton) << "\n";
  std::cout << "theta:";
  for (Eigen::Index i = 0; i < cand->fit.theta.size(); ++i)
    std::cout << " " << format_double(cand->fit.theta[i]);
  std::cout << "\n";
  std::cout << "nmse: " << format_double(cand->fit.nmse) << "\n";
  std::cout << "path: " << fit_path_name(cand->fit.path) << "\n";
  std::cout << "score: " << format_double(cand->score) << "\n";
  std::cout << "effective parameters: " << cand->complexity.n_eff << "\n";
  return 0;
}

int cmd_eval(const std::string& skeleton_text, const std::string& theta_text,
             const std::string& data_path, double tau) {
  const Skeleton s = parse(skeleton_text);
  const Eigen::VectorXd theta = parse_theta_list(theta_text);
  if (theta.size() != s.param_count)
    throw ParseError("theta has " + std::to_string(theta.size()) + " entries, skeleton needs " +
                     std::to_string(s.param_count));
  const SplitBlock block = load_csv(data_path, "y");
  const Eigen::ArrayXd pred = evaluate(s, theta, block.inputs);

  std::cout << "accuracy epsilon: " << format_double(kAccEpsilon) << "\n";
  std::cout << "rows: " << block.y.size() << "\n";
  const double var = population_variance(block.y);
  std::cout << "nmse: "
            << (var > 0.0 && pred.allFinite()
                    ? format_double((pred - block.y.array()).square().mean() / var)
                    : "inf")
            << "\n";
  std::cout << "acc@" << format_double(tau) << ": " << format_double(acc_at_tau(pred, block.y, tau))
            << "\n";
  std::cout << "acc_max@" << format_double(tau) << ": " << acc_max_at_tau(pred, block.y, tau)
            << "\n";
  return 0;
}

int cmd_hint(const std::string& data_path) {
  const SplitBlock block = load_csv(data_path, "y");
  std::cout << render_hint(build_data_hint(block));
  return 0;
}

int cmd_synth(const std::string& name, const std::string& out_dir, uint64_t seed, int n_train,
              int n_id, int n_ood, double noise) {
  const Dataset ds = make_synthetic(name, n_train, n_id, n_ood, noise, seed);
  ensure_dir(out_dir);
  write_csv(out_dir + "/train.csv", ds.train, "y");
  write_csv(out_dir + "/id_test.csv", ds.id_test, "y");
  write_csv(out_dir + "/ood_test.csv", ds.ood_test, "y");
  const SyntheticTruth truth = synthetic_truth(name);
  std::cout << "system: " << name << "\n";
  std::cout << "truth: " << truth.skeleton << "\n";
  std::cout << "theta:";
  for (Eigen::Index i = 0; i < truth.theta.size(); ++i)
    std::cout << " " << format_double(truth.theta[i]);
  std::cout << "\n";
  std::cout << "wrote " << out_dir << "/{train,id_test,ood_test}.csv (" << n_train << "/" << n_id
            << "/" << n_ood << " rows)\n";
  return 0;
}

int cmd_memdump(const std::string& state_path) {
  std::ifstream in(state_path);
  if (!in) throw DataError("cannot open file: " + state_path);
  const SemanticMemory mem = SemanticMemory::restore(in);
  std::cout << "islands: " << mem.island_count() << ", clusters: " << mem.cluster_count() << "\n";
  for (int i = 0; i < mem.island_count(); ++i) {
    const Island& isl = mem.island(i);
    if (isl.clusters.empty()) continue;
    std::cout << "island " << i << ":\n";
    for (std::size_t c = 0; c < isl.clusters.size(); ++c) {
      const auto& elite = isl.clusters[c].elite;
      std::cout << "  cluster " << c << "  score=" << format_double(elite.score) << "  "
                << render(elite.skeleton) << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"closed-loop equation discovery over tabular data"};
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run_cmd = app.add_subcommand("run", "full discovery run over a train/ID/OOD dataset");
  run_cmd->add_option("--config", run_args.config_path, "run configuration JSON")->required();
  run_cmd->add_option("--train", run_args.train_path, "training CSV (target column y)")->required();
  run_cmd->add_option("--id-test", run_args.id_path, "in-domain test CSV")->required();
  run_cmd->add_option("--ood-test", run_args.ood_path, "out-of-domain test CSV")->required();
  run_cmd->add_option("--out", run_args.out_dir, "output directory")->required();
  run_cmd->add_option("--script", run_args.script_path, "replay script file (scripted backend)");
  run_cmd->add_option("--task", run_args.task_description, "task description for prompts");
  run_cmd->add_option("--http-host", run_args.http_host, "chat endpoint host (HTTP backend)");
  run_cmd->add_option("--http-port", run_args.http_port, "chat endpoint port");
  run_cmd->add_option("--http-path", run_args.http_path, "chat endpoint path");
  run_cmd->add_option("--http-model", run_args.http_model, "model name sent to the endpoint");
  run_cmd->add_option("--http-key-env", run_args.http_key_env,
                      "environment variable holding the API key");

  std::string fit_skeleton, fit_data;
  uint64_t fit_seed = 0;
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit one skeleton's parameters to a CSV");
  fit_cmd->add_option("--skeleton", fit_skeleton, "expression with params[k] placeholders")
      ->required();
  fit_cmd->add_option("--data", fit_data, "CSV with target column y")->required();
  fit_cmd->add_option("--seed", fit_seed, "optimizer seed");

  std::string eval_skeleton, eval_theta, eval_data;
  double eval_tau = 0.1;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a fixed equation against a CSV");
  eval_cmd->add_option("--skeleton", eval_skeleton, "expression with params[k] placeholders")
      ->required();
  eval_cmd->add_option("--theta", eval_theta, "comma-separated parameter values")->required();
  eval_cmd->add_option("--data", eval_data, "CSV with target column y")->required();
  eval_cmd->add_option("--tau", eval_tau, "relative error tolerance");

  std::string hint_data;
  CLI::App* hint_cmd = app.add_subcommand("hint", "print the data hint for a CSV");
  hint_cmd->add_option("--data", hint_data, "CSV with target column y")->required();

  std::string synth_name, synth_out;
  uint64_t synth_seed = 0;
  int synth_train = 500, synth_id = 200, synth_ood = 200;
  double synth_noise = 0.0;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a built-in synthetic dataset");
  synth_cmd->add_option("--name", synth_name, "oscillator1|oscillator2|bactgrow|stress_strain")
      ->required();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "generation seed");
  synth_cmd->add_option("--n-train", synth_train, "training rows");
  synth_cmd->add_option("--n-id", synth_id, "in-domain test rows");
  synth_cmd->add_option("--n-ood", synth_ood, "out-of-domain test rows");
  synth_cmd->add_option("--noise", synth_noise, "Gaussian noise sigma on the train target");

  std::string memdump_state;
  CLI::App* memdump_cmd = app.add_subcommand("memdump", "summarize a memory state file");
  memdump_cmd->add_option("--state", memdump_state, "memory dump (JSON lines)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run_cmd) return cmd_run(run_args);
    if (*fit_cmd) return cmd_fit(fit_skeleton, fit_data, fit_seed);
    if (*eval_cmd) return cmd_eval(eval_skeleton, eval_theta, eval_data, eval_tau);
    if (*hint_cmd) return cmd_hint(hint_data);
    if (*synth_cmd)
      return cmd_synth(synth_name, synth_out, synth_seed, synth_train, synth_id, synth_ood,
                       synth_noise);
    if (*memdump_cmd) return cmd_memdump(memdump_state);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ReplayExhausted& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ProviderError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
