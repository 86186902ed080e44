#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockfl/chain.hpp"
#include "blockfl/fl_core.hpp"
#include "blockfl/latency_model.hpp"
#include "blockfl/params.hpp"
#include "blockfl/rng.hpp"

namespace blockfl {

enum class Mode { BlockFL, Vanilla, Standalone };

std::string to_string(Mode mode);
std::optional<Mode> parse_mode(const std::string& text);

struct MalfunctionEvent {
  int miner_id = 0;  // 0 is the central server in vanilla mode
  std::vector<int> devices;
};

struct EpochTrace {
  std::uint64_t epoch = 0;
  Associations associations;  // of the accepted attempt
  int winner = 0;             // 0 when nothing was mined
  LatencyBreakdown breakdown;
  int fork_attempts = 1;
  BlockPtr block;  // accepted block; null outside BlockFL
  Vector global_w_after;
  std::vector<MalfunctionEvent> malfunction_events;
  std::vector<int> active_miners;
  std::vector<int> rejected_devices;
  // Completion time of Steps 1..7 for the observed device, seconds since the
  // epoch started. Earlier forked attempts are included in Steps 1..5.
  std::array<double, 7> step_times{};
  int aborted_attempts = 0;  // restarts because every miner was below theta_e
};

struct RunResult {
  Mode mode = Mode::BlockFL;
  std::vector<EpochTrace> epochs;
  double completion_latency = 0.0;
  GlobalModel final_model;
  TestMetrics test;
  RewardLedger rewards;
  std::optional<std::uint64_t> converged_at;
  int observed_device = 1;
  std::vector<int> sample_counts;
};

class NoActiveMiners : public std::runtime_error {
 public:
  NoActiveMiners() : std::runtime_error("no active miners: every battery is below theta_e") {}
};

// Each miner draws a battery level U[0,1) and joins iff it is >= theta_e.
// Returns the ids of the active miners, ascending.
std::vector<int> apply_energy_threshold(int n_miners, Rng& rng, const SystemParams& p);

// Per-device views of the aggregate. Every active miner independently
// malfunctions with malfunction_prob and then adds one N(mean, var) noise
// vector to the aggregate it serves; its devices see aggregate + noise, all
// other devices see the aggregate unchanged.
std::vector<Vector> inject_malfunction(const Vector& aggregate, const Associations& associations,
                                       std::span<const int> active_miners, Rng& rng,
                                       const SystemParams& p,
                                       std::vector<MalfunctionEvent>* events = nullptr);

// Discrete-event execution of the epoch protocol for one replication.
// Virtual time only; the run is fully determined by (params, seed, mode).
class Simulator {
 public:
  Simulator(SystemParams params, std::uint64_t seed, Mode mode);
  Simulator(SystemParams params, SyntheticData data, std::uint64_t seed, Mode mode);

  // One epoch. Throws NoActiveMiners when theta_e leaves no miner.
  EpochTrace run_epoch();

  // Epochs until convergence or max_epochs.
  RunResult run();

  [[nodiscard]] const GlobalModel& global() const { return global_; }
  [[nodiscard]] const std::vector<Vector>& device_views() const { return views_; }
  [[nodiscard]] const SyntheticData& data() const { return data_; }
  [[nodiscard]] const Ledger& ledger(int miner_id) const { return ledgers_.at(miner_id - 1); }
  [[nodiscard]] const RewardLedger& rewards() const { return rewards_; }
  [[nodiscard]] int observed_device() const { return observed_; }
  [[nodiscard]] const SystemParams& params() const { return params_; }

 private:
  void init(std::uint64_t seed);
  std::vector<LocalUpdate> local_updates(std::uint64_t epoch);
  Associations draw_associations(std::span<const int> active);
  EpochTrace blockfl_epoch();
  EpochTrace vanilla_epoch(std::vector<LocalUpdate> updates);
  EpochTrace standalone_epoch();

  SystemParams params_;
  Mode mode_;
  SyntheticData data_;
  std::uint64_t training_seed_ = 0;
  Rng protocol_rng_;
  int observed_ = 1;
  GlobalModel global_;
  std::vector<Vector> views_;
  std::vector<Ledger> ledgers_;
  RewardLedger rewards_;
  std::optional<Associations> sticky_;
};

RunResult run_training(const SystemParams& params, std::uint64_t seed, Mode mode);

struct OvertakeEstimate {
  double probability = 0.0;
  double standard_error = 0.0;
  std::int64_t replications = 0;
  std::int64_t truncated = 0;  // replications stopped at the deficit cap
};

// Attacker mines at lambda, the honest pool at n_honest * lambda. The
// attacker starts z blocks behind and overtakes once its chain is one block
// longer. A replication is abandoned once the deficit reaches
// kOvertakeDeficitCap.
inline constexpr int kOvertakeDeficitCap = 100;
OvertakeEstimate simulate_overtake(int z, int n_honest, double lambda,
                                   std::int64_t replications, Rng& rng);

}  // namespace blockfl
