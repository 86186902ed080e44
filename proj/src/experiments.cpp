#include "blockfl/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "blockfl/latency_model.hpp"
#include "blockfl/rng.hpp"

namespace blockfl {

Stat summarize(std::span<const double> values) {
  Stat s;
  const auto n = static_cast<double>(values.size());
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= n;
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return s;
}

SystemParams apply_axis(SystemParams base, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::Lambda: base.lambda = value; break;
    case SweepAxis::NDevices: base.n_devices = static_cast<int>(value); break;
    case SweepAxis::NMiners: base.n_miners = static_cast<int>(value); break;
    case SweepAxis::Snr:
      base.snr_up = base.snr_dn = base.snr_miner = db_to_linear(value);
      break;
    case SweepAxis::ThetaE: base.energy_threshold = value; break;
    case SweepAxis::OvertakeZ:
    case SweepAxis::None: break;
  }
  return base;
}

std::uint64_t replication_seed(std::uint64_t master_seed, int index) {
  return derive_seed(master_seed, streams::kReplication, static_cast<std::uint64_t>(index));
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

double overtake_closed_form(int z, int n_honest) {
  const double q = 1.0 / (1.0 + n_honest);
  const double p = 1.0 - q;
  return q >= p ? 1.0 : std::pow(q / p, z + 1);
}

namespace {

struct Replicate {
  bool ok = false;
  std::string error;
  double latency = 0.0;
  double epochs = 0.0;
  double fork_attempts = 0.0;
  double accuracy = 0.0;
  double mse = 0.0;
  double data_rewards = 0.0;
  double mining_rewards = 0.0;
  bool converged = false;
};

Replicate run_replicate(const SystemParams& p, std::uint64_t seed, Mode mode) {
  Replicate r;
  try {
    const RunResult res = run_training(p, seed, mode);
    double forks = 0.0;
    for (const auto& e : res.epochs) forks += e.fork_attempts;
    r.ok = true;
    r.latency = res.completion_latency;
    r.epochs = static_cast<double>(res.epochs.size());
    r.fork_attempts = res.epochs.empty() ? 0.0 : forks / r.epochs;
    r.accuracy = res.test.accuracy;
    r.mse = res.test.mse;
    r.data_rewards = res.rewards.total_data_rewards();
    r.mining_rewards = res.rewards.total_mining_rewards();
    r.converged = res.converged_at.has_value();
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

SweepPoint aggregate(Mode mode, double value, const SystemParams& p,
                     const std::vector<Replicate>& reps) {
  SweepPoint pt;
  pt.mode = mode;
  pt.value = value;
  pt.replications = static_cast<int>(reps.size());
  std::vector<double> lat, ep, fk, acc, mse, dr, mr;
  int conv = 0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++pt.failures;
      if (pt.error.empty()) pt.error = r.error;
      continue;
    }
    lat.push_back(r.latency);
    ep.push_back(r.epochs);
    fk.push_back(r.fork_attempts);
    acc.push_back(r.accuracy);
    mse.push_back(r.mse);
    dr.push_back(r.data_rewards);
    mr.push_back(r.mining_rewards);
    conv += r.converged ? 1 : 0;
  }
  pt.completion_latency = summarize(lat);
  pt.epochs = summarize(ep);
  pt.fork_attempts = summarize(fk);
  pt.test_accuracy = summarize(acc);
  pt.test_mse = summarize(mse);
  pt.data_rewards = summarize(dr);
  pt.mining_rewards = summarize(mr);
  pt.converged_fraction = lat.empty() ? 0.0 : static_cast<double>(conv) / static_cast<double>(lat.size());
  pt.replicate_latency = std::move(lat);

  if (mode == Mode::BlockFL) {
    pt.analytic_epoch_latency = expected_epoch_latency(p);
    const OptimalLambda opt = optimal_lambda(p);
    pt.lambda_star = opt.closed_form;
    pt.lambda_star_numeric = opt.numeric;
  }
  return pt;
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& config) {
  SweepResult result;
  result.axis = config.axis;

  if (config.axis == SweepAxis::OvertakeZ) {
    const int n_honest = std::max(1, config.base.n_miners - 1);
    result.overtake.resize(config.values.size());
    parallel_for(config.values.size(), config.threads, [&](std::size_t i) {
      const int z = static_cast<int>(config.values[i]);
      Rng rng(derive_seed(config.master_seed, streams::kOvertake, static_cast<std::uint64_t>(z)));
      OvertakePoint& op = result.overtake[i];
      op.z = z;
      op.n_honest = n_honest;
      op.estimate = simulate_overtake(z, n_honest, config.base.lambda,
                                      config.overtake_replications, rng);
      op.closed_form = overtake_closed_form(z, n_honest);
    });
    return result;
  }

  std::vector<Mode> modes{config.mode};
  if (config.vanilla_baseline && config.mode != Mode::Vanilla) modes.push_back(Mode::Vanilla);
  if (config.standalone_baseline && config.mode != Mode::Standalone)
    modes.push_back(Mode::Standalone);

  const std::size_t n_points = config.values.size() * modes.size();
  const auto reps = static_cast<std::size_t>(config.replications);
  std::vector<Replicate> runs(n_points * reps);
  std::vector<SystemParams> point_params(n_points);
  for (std::size_t v = 0; v < config.values.size(); ++v)
    for (std::size_t m = 0; m < modes.size(); ++m)
      point_params[v * modes.size() + m] = apply_axis(config.base, config.axis, config.values[v]);

  parallel_for(runs.size(), config.threads, [&](std::size_t job) {
    const std::size_t point = job / reps;
    const int rep = static_cast<int>(job % reps);
    runs[job] = run_replicate(point_params[point], replication_seed(config.master_seed, rep),
                              modes[point % modes.size()]);
  });

  for (std::size_t point = 0; point < n_points; ++point) {
    std::vector<Replicate> slice(runs.begin() + static_cast<std::ptrdiff_t>(point * reps),
                                 runs.begin() + static_cast<std::ptrdiff_t>((point + 1) * reps));
    result.points.push_back(aggregate(modes[point % modes.size()],
                                      config.values[point / modes.size()], point_params[point],
                                      slice));
  }
  return result;
}

const std::vector<std::string>& sweep_columns() {
  static const std::vector<std::string> cols{
      "mode",
      "sweep_value",
      "replications",
      "failures",
      "completion_latency_mean_s",
      "completion_latency_se_s",
      "epochs_mean",
      "epochs_se",
      "fork_attempts_per_epoch_mean",
      "fork_attempts_per_epoch_se",
      "test_accuracy_mean_prob",
      "test_accuracy_se_prob",
      "test_mse_mean",
      "test_mse_se",
      "data_rewards_mean_units",
      "data_rewards_se_units",
      "mining_rewards_mean_units",
      "mining_rewards_se_units",
      "converged_fraction_prob",
      "analytic_epoch_latency_s",
      "lambda_star_per_s",
      "lambda_star_numeric_per_s",
      "error",
  };
  return cols;
}

const std::vector<std::string>& overtake_columns() {
  static const std::vector<std::string> cols{
      "z_blocks",       "n_honest",           "overtake_prob",        "overtake_se_prob",
      "replications",   "truncated",          "closed_form_prob",
  };
  return cols;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> sweep_fields(const SweepPoint& p) {
  return {to_string(p.mode),
          num(p.value),
          std::to_string(p.replications),
          std::to_string(p.failures),
          num(p.completion_latency.mean),
          num(p.completion_latency.se),
          num(p.epochs.mean),
          num(p.epochs.se),
          num(p.fork_attempts.mean),
          num(p.fork_attempts.se),
          num(p.test_accuracy.mean),
          num(p.test_accuracy.se),
          num(p.test_mse.mean),
          num(p.test_mse.se),
          num(p.data_rewards.mean),
          num(p.data_rewards.se),
          num(p.mining_rewards.mean),
          num(p.mining_rewards.se),
          num(p.converged_fraction),
          num(p.analytic_epoch_latency),
          num(p.lambda_star),
          num(p.lambda_star_numeric),
          p.error};
}

nlohmann::ordered_json sweep_json(const SweepPoint& p) {
  nlohmann::ordered_json j;
  const auto& cols = sweep_columns();
  j[cols[0]] = to_string(p.mode);
  j[cols[1]] = p.value;
  j[cols[2]] = p.replications;
  j[cols[3]] = p.failures;
  const double stats[] = {p.completion_latency.mean, p.completion_latency.se, p.epochs.mean,
                          p.epochs.se, p.fork_attempts.mean, p.fork_attempts.se,
                          p.test_accuracy.mean, p.test_accuracy.se, p.test_mse.mean,
                          p.test_mse.se, p.data_rewards.mean, p.data_rewards.se,
                          p.mining_rewards.mean, p.mining_rewards.se, p.converged_fraction,
                          p.analytic_epoch_latency, p.lambda_star, p.lambda_star_numeric};
  for (std::size_t i = 0; i < std::size(stats); ++i) j[cols[4 + i]] = stats[i];
  j[cols.back()] = p.error;
  return j;
}

// Field order matches sweep_columns().
SweepPoint point_from_fields(const std::vector<std::string>& f) {
  if (f.size() != sweep_columns().size())
    throw std::runtime_error("sweep row has " + std::to_string(f.size()) + " fields, expected " +
                             std::to_string(sweep_columns().size()));
  SweepPoint p;
  auto mode = parse_mode(f[0]);
  if (!mode) throw std::runtime_error("unknown mode '" + f[0] + "'");
  p.mode = *mode;
  auto d = [&](std::size_t i) { return std::stod(f[i]); };
  p.value = d(1);
  p.replications = std::stoi(f[2]);
  p.failures = std::stoi(f[3]);
  Stat* stats[] = {&p.completion_latency, &p.epochs, &p.fork_attempts, &p.test_accuracy,
                   &p.test_mse, &p.data_rewards, &p.mining_rewards};
  for (std::size_t i = 0; i < std::size(stats); ++i) {
    stats[i]->mean = d(4 + 2 * i);
    stats[i]->se = d(5 + 2 * i);
  }
  p.converged_fraction = d(18);
  p.analytic_epoch_latency = d(19);
  p.lambda_star = d(20);
  p.lambda_star_numeric = d(21);
  p.error = f[22];
  return p;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_escape(fields[i]);
  out << '\n';
}

}  // namespace

void emit_results(const SweepResult& result, OutputFormat format, std::ostream& out) {
  const bool overtake = result.axis == SweepAxis::OvertakeZ;
  if (format == OutputFormat::Csv) {
    write_row(out, overtake ? overtake_columns() : sweep_columns());
    if (overtake) {
      for (const auto& o : result.overtake)
        write_row(out, {std::to_string(o.z), std::to_string(o.n_honest),
                        num(o.estimate.probability), num(o.estimate.standard_error),
                        std::to_string(o.estimate.replications),
                        std::to_string(o.estimate.truncated), num(o.closed_form)});
    } else {
      for (const auto& p : result.points) write_row(out, sweep_fields(p));
    }
    return;
  }
  if (overtake) {
    const auto& cols = overtake_columns();
    for (const auto& o : result.overtake) {
      nlohmann::ordered_json j;
      j[cols[0]] = o.z;
      j[cols[1]] = o.n_honest;
      j[cols[2]] = o.estimate.probability;
      j[cols[3]] = o.estimate.standard_error;
      j[cols[4]] = o.estimate.replications;
      j[cols[5]] = o.estimate.truncated;
      j[cols[6]] = o.closed_form;
      out << j.dump() << '\n';
    }
  } else {
    for (const auto& p : result.points) out << sweep_json(p).dump() << '\n';
  }
}

std::filesystem::path emit_results(const SweepResult& result, OutputFormat format,
                                   const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " +
                                   ec.message());
  const std::string stem = result.axis == SweepAxis::OvertakeZ ? "overtake" : "sweep";
  const auto path = dir / (stem + (format == OutputFormat::Csv ? ".csv" : ".jsonl"));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  emit_results(result, format, out);
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
  return path;
}

std::vector<SweepPoint> read_sweep_jsonl(std::istream& in) {
  std::vector<SweepPoint> out;
  std::string line;
  const auto& cols = sweep_columns();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    // NaN overlays are emitted as null.
    auto real = [&](const std::string& key) {
      const auto& v = j.at(key);
      return v.is_null() ? std::nan("") : v.get<double>();
    };
    SweepPoint p;
    auto mode = parse_mode(j.at(cols[0]).get<std::string>());
    if (!mode) throw std::runtime_error("unknown mode in sweep row");
    p.mode = *mode;
    p.value = real(cols[1]);
    p.replications = j.at(cols[2]).get<int>();
    p.failures = j.at(cols[3]).get<int>();
    Stat* stats[] = {&p.completion_latency, &p.epochs, &p.fork_attempts, &p.test_accuracy,
                     &p.test_mse, &p.data_rewards, &p.mining_rewards};
    for (std::size_t i = 0; i < std::size(stats); ++i) {
      stats[i]->mean = real(cols[4 + 2 * i]);
      stats[i]->se = real(cols[5 + 2 * i]);
    }
    p.converged_fraction = real(cols[18]);
    p.analytic_epoch_latency = real(cols[19]);
    p.lambda_star = real(cols[20]);
    p.lambda_star_numeric = real(cols[21]);
    p.error = j.at(cols[22]).get<std::string>();
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<SweepPoint> read_sweep_csv(std::istream& in) {
  std::vector<SweepPoint> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  if (split_csv(line) != sweep_columns()) throw std::runtime_error("unexpected sweep CSV header");
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(point_from_fields(split_csv(line)));
  return out;
}

}  // namespace blockfl
