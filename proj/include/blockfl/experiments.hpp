#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "blockfl/config.hpp"
#include "blockfl/simulator.hpp"

namespace blockfl {

struct Stat {
  double mean = 0.0;
  double se = 0.0;  // sample sd / sqrt(n); 0 when n < 2
};

Stat summarize(std::span<const double> values);

struct SweepPoint {
  Mode mode = Mode::BlockFL;
  double value = 0.0;
  int replications = 0;
  int failures = 0;
  std::string error;  // first failure message, empty when none
  Stat completion_latency;
  Stat epochs;
  Stat fork_attempts;  // mean fork attempts per epoch
  Stat test_accuracy;
  Stat test_mse;
  Stat data_rewards;
  Stat mining_rewards;
  double converged_fraction = 0.0;
  double analytic_epoch_latency = 0.0;
  double lambda_star = 0.0;
  double lambda_star_numeric = 0.0;
  std::vector<double> replicate_latency;  // kept for paired comparisons, not emitted
};

struct OvertakePoint {
  int z = 0;
  int n_honest = 0;
  OvertakeEstimate estimate;
  double closed_form = 0.0;  // (q/p)^(z+1) with q = 1/(1+n_honest)
};

struct SweepResult {
  SweepAxis axis = SweepAxis::None;
  std::vector<SweepPoint> points;
  std::vector<OvertakePoint> overtake;
};

SystemParams apply_axis(SystemParams base, SweepAxis axis, double value);

// Seed of replication `index`; independent of sweep value and mode so that
// points are compared on common random numbers.
std::uint64_t replication_seed(std::uint64_t master_seed, int index);

// Runs fn(0..n-1) on a worker pool. Results must be written by index.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

SweepResult run_sweep(const ExperimentConfig& config);

double overtake_closed_form(int z, int n_honest);

void emit_results(const SweepResult& result, OutputFormat format, std::ostream& out);

// Writes <dir>/sweep.csv or <dir>/sweep.jsonl; returns the path.
std::filesystem::path emit_results(const SweepResult& result, OutputFormat format,
                                   const std::filesystem::path& dir);

// Column order of the sweep table.
const std::vector<std::string>& sweep_columns();
const std::vector<std::string>& overtake_columns();

// Readers for the emitted tables, used by round-trip tests and tooling.
std::vector<SweepPoint> read_sweep_jsonl(std::istream& in);
std::vector<SweepPoint> read_sweep_csv(std::istream& in);

}  // namespace blockfl
