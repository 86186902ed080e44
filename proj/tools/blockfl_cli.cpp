// Command-line front end: single runs, parameter sweeps, optimal block rate,
// overtake race and config validation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "blockfl/config.hpp"
#include "blockfl/experiments.hpp"
#include "blockfl/latency_model.hpp"
#include "blockfl/simulator.hpp"
#include "blockfl/trace_io.hpp"

namespace {

using namespace blockfl;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> replications;
  std::optional<std::string> out;
  std::optional<std::string> format;
  std::optional<std::string> mode;
  std::optional<std::string> malfunction;
  std::optional<double> lambda;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool sweep_flags) {
  cmd->add_option("--config", o.config, "Config file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--mode", o.mode, "blockfl | vanilla | standalone");
  cmd->add_option("--malfunction", o.malfunction, "Miner malfunction on | off");
  cmd->add_option("--lambda", o.lambda, "Block generation rate, 1/s");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--format", o.format, "csv | jsonl");
  if (sweep_flags) {
    cmd->add_option("--replications", o.replications, "Replications per sweep point");
    cmd->add_option("--threads", o.threads, "Worker threads, 0 = all cores");
  }
}

// Config file (or built-in defaults) with command-line overrides applied.
ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  std::vector<std::string> errors;
  if (o.seed) cfg.master_seed = *o.seed;
  if (o.replications) cfg.replications = *o.replications;
  if (o.out) cfg.output_dir = *o.out;
  if (o.threads) cfg.threads = *o.threads;
  if (o.lambda) cfg.base.lambda = *o.lambda;
  if (o.format) {
    if (auto f = parse_format(*o.format)) cfg.format = *f;
    else errors.push_back("--format: expected csv or jsonl, got '" + *o.format + "'");
  }
  if (o.mode) {
    if (auto m = parse_mode(*o.mode)) cfg.mode = *m;
    else errors.push_back("--mode: expected blockfl, vanilla or standalone, got '" + *o.mode + "'");
  }
  if (o.malfunction) {
    if (*o.malfunction == "on") cfg.base.malfunction_enabled = true;
    else if (*o.malfunction == "off") cfg.base.malfunction_enabled = false;
    else errors.push_back("--malfunction: expected on or off, got '" + *o.malfunction + "'");
  }
  for (auto& e : cfg.base.validate()) errors.push_back(std::move(e));
  if (cfg.replications < 1) errors.push_back("replications must be >= 1");
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

int cmd_run(const CommonOptions& o) {
  const ExperimentConfig cfg = resolve(o);
  const RunResult r = run_training(cfg.base, cfg.master_seed, cfg.mode);
  std::printf("mode                 %s\n", to_string(r.mode).c_str());
  std::printf("epochs               %zu\n", r.epochs.size());
  std::printf("converged            %s\n", r.converged_at ? "yes" : "no");
  std::printf("completion_latency_s %.6g\n", r.completion_latency);
  std::printf("test_accuracy        %.6g\n", r.test.accuracy);
  std::printf("test_mse             %.6g\n", r.test.mse);
  std::printf("data_rewards         %.6g\n", r.rewards.total_data_rewards());
  std::printf("mining_rewards       %.6g\n", r.rewards.total_mining_rewards());
  if (o.out) {
    std::filesystem::create_directories(*o.out);
    const auto path = std::filesystem::path(*o.out) / "trace.jsonl";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    write_trace(r, out);
    std::printf("trace                %s\n", path.string().c_str());
  }
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::optional<std::string>& axis) {
  ExperimentConfig cfg = resolve(o);
  if (axis) {
    auto a = parse_axis(*axis);
    if (!a) throw ConfigError({"--axis: unknown sweep axis '" + *axis + "'"});
    if (*a != cfg.axis) cfg.values = default_grid(*a);
    cfg.axis = *a;
  }
  if (cfg.values.empty()) cfg.values = default_grid(cfg.axis);
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + cfg.output_dir + "'");
  const SweepResult result = run_sweep(cfg);
  const auto path = emit_results(result, cfg.format, std::filesystem::path(cfg.output_dir));
  std::printf("%s\n", path.string().c_str());
  for (const auto& p : result.points)
    if (p.failures > 0)
      std::fprintf(stderr, "%s at %g: %d failed replications (%s)\n", to_string(p.mode).c_str(),
                   p.value, p.failures, p.error.c_str());
  return 0;
}

int cmd_optimal_lambda(const CommonOptions& o, const std::optional<std::string>& reading) {
  ExperimentConfig cfg = resolve(o);
  if (reading) {
    if (*reading == "max") cfg.base.propagation_reading = PropagationReading::MaxDelay;
    else if (*reading == "link") cfg.base.propagation_reading = PropagationReading::SingleLink;
    else if (*reading == "total") cfg.base.propagation_reading = PropagationReading::Total;
    else throw ConfigError({"--reading: expected max, link or total, got '" + *reading + "'"});
  }
  const OptimalLambda opt = optimal_lambda(cfg.base);
  const ExpectedLatencyTerms terms = expected_latency_terms(cfg.base);
  std::printf("reading              %s\n", to_string(cfg.base.propagation_reading).c_str());
  std::printf("t_bp_used_s          %.6g\n", opt.propagation_used);
  std::printf("lambda_closed_form   %.6g\n", opt.closed_form);
  std::printf("lambda_numeric       %.6g\n", opt.numeric);
  std::printf("relative_gap         %.6g\n", opt.relative_gap);
  std::printf("lambda_stationary    %.6g\n", stationary_lambda(terms));
  std::printf("expected_latency_s   %.6g\n", expected_epoch_latency(terms, opt.numeric));
  if (opt.fallback) std::printf("note                 closed form undefined, numeric value used\n");
  return 0;
}

int cmd_overtake(const CommonOptions& o, int z_max, int n_honest, std::int64_t replications) {
  ExperimentConfig cfg = resolve(o);
  if (z_max < 0 || n_honest < 1 || replications < 1)
    throw ConfigError({"overtake needs --z-max >= 0, --n-honest >= 1, --replications >= 1"});
  cfg.axis = SweepAxis::OvertakeZ;
  cfg.values.clear();
  for (int z = 0; z <= z_max; ++z) cfg.values.push_back(z);
  cfg.base.n_miners = n_honest + 1;
  cfg.overtake_replications = replications;
  const SweepResult result = run_sweep(cfg);
  if (o.out) {
    const auto path = emit_results(result, cfg.format, std::filesystem::path(*o.out));
    std::printf("%s\n", path.string().c_str());
  } else {
    emit_results(result, cfg.format, std::cout);
  }
  return 0;
}

int cmd_validate(const std::string& path, bool keys) {
  if (keys) {
    for (const auto& [k, d] : config_keys()) std::printf("%-24s %s\n", k.c_str(), d.c_str());
    return 0;
  }
  load_config(path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BlockFL simulator and latency toolkit"};
  app.require_subcommand(1);

  CommonOptions run_opts, sweep_opts, lambda_opts, overtake_opts;
  auto* run = app.add_subcommand("run", "Train once and report latency, accuracy and rewards");
  add_common(run, run_opts, false);

  auto* sweep = app.add_subcommand("sweep", "Replicated sweep over one parameter axis");
  add_common(sweep, sweep_opts, true);
  std::optional<std::string> axis;
  sweep->add_option("--axis", axis, "lambda | n_devices | n_miners | snr | theta_e | overtake_z");

  auto* lambda = app.add_subcommand("optimal-lambda", "Closed-form and numeric optimal block rate");
  add_common(lambda, lambda_opts, false);
  std::optional<std::string> reading;
  lambda->add_option("--reading", reading, "Propagation delay in the closed form: max | link | total");

  auto* overtake = app.add_subcommand("overtake", "Malicious miner overtake probability over z");
  add_common(overtake, overtake_opts, false);
  int z_max = 8, n_honest = 9;
  std::int64_t ot_reps = 100'000;
  overtake->add_option("--z-max", z_max, "Largest head start z")->capture_default_str();
  overtake->add_option("--n-honest", n_honest, "Honest miners")->capture_default_str();
  overtake->add_option("--replications", ot_reps, "Races per z")->capture_default_str();

  auto* validate = app.add_subcommand("validate-config", "Load and validate a config file");
  std::string validate_path;
  bool keys = false;
  auto* path_opt = validate->add_option("--config", validate_path, "Config file");
  validate->add_flag("--keys", keys, "List accepted keys instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*sweep) return cmd_sweep(sweep_opts, axis);
    if (*lambda) return cmd_optimal_lambda(lambda_opts, reading);
    if (*overtake) return cmd_overtake(overtake_opts, z_max, n_honest, ot_reps);
    if (*validate) {
      if (!keys && path_opt->count() == 0) throw ConfigError({"--config is required"});
      return cmd_validate(validate_path, keys);
    }
  } catch (const ConfigError& e) {
    for (const auto& msg : e.errors()) std::fprintf(stderr, "error: %s\n", msg.c_str());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
