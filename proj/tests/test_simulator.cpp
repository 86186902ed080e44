#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "blockfl/simulator.hpp"
#include "blockfl/trace_io.hpp"

using namespace blockfl;

namespace {

SystemParams fast_params() {
  SystemParams p;
  p.n_devices = 6;
  p.n_miners = 4;
  p.test_samples = 50;
  return p;
}

double binomial_se(double p, double n) { return std::sqrt(p * (1 - p) / n); }

}  // namespace

TEST_SUITE("simulator") {

TEST_CASE("epoch trace respects protocol order and the latency formula") {
  SystemParams p;
  p.lambda = 1.0;
  Simulator sim(p, 3, Mode::BlockFL);
  for (int e = 0; e < 40; ++e) {
    const EpochTrace tr = sim.run_epoch();
    CHECK(tr.fork_attempts >= 1);
    CHECK(tr.breakdown.n_fork == tr.fork_attempts);
    CHECK(std::find(tr.active_miners.begin(), tr.active_miners.end(), tr.winner) !=
          tr.active_miners.end());
    for (std::size_t s = 1; s < tr.step_times.size(); ++s)
      CHECK(tr.step_times[s] >= tr.step_times[s - 1]);
    CHECK(tr.step_times.back() == doctest::Approx(tr.breakdown.total).epsilon(1e-12));
    CHECK(tr.breakdown.total == epoch_latency_realized(tr.breakdown, tr.fork_attempts));
    const LatencyBreakdown& b = tr.breakdown;
    for (double c : {b.t_local, b.t_up, b.t_cross, b.t_bg, b.t_bp, b.t_dn, b.t_global})
      CHECK(c >= 0.0);
    CHECK(tr.block);
    CHECK(tr.block->body.size() == static_cast<std::size_t>(p.n_devices));
  }
}

TEST_CASE("completion latency is the exact sum of epoch totals") {
  const RunResult r = run_training(SystemParams{}, 11, Mode::BlockFL);
  double sum = 0.0;
  for (const auto& e : r.epochs) sum += e.breakdown.total;
  CHECK(r.completion_latency == sum);
  CHECK(r.converged_at.has_value());
  CHECK(*r.converged_at == r.epochs.size());
}

TEST_CASE("BlockFL and vanilla share the weight trajectory") {
  for (int n_miners : {1, 10}) {
    SystemParams p;
    p.n_miners = n_miners;
    const RunResult a = run_training(p, 21, Mode::BlockFL);
    const RunResult b = run_training(p, 21, Mode::Vanilla);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i)
      CHECK(a.epochs[i].global_w_after == b.epochs[i].global_w_after);
    CHECK(a.test.accuracy == b.test.accuracy);
    CHECK(a.test.mse == b.test.mse);
  }
}

TEST_CASE("a single miner never forks and pays no propagation") {
  SystemParams p;
  p.n_miners = 1;
  p.lambda = 5.0;
  Simulator sim(p, 4, Mode::BlockFL);
  for (int e = 0; e < 200; ++e) {
    const EpochTrace tr = sim.run_epoch();
    CHECK(tr.fork_attempts == 1);
    CHECK(tr.breakdown.t_bp == 0.0);
    CHECK(tr.winner == 1);
  }
}

TEST_CASE("vanilla mode has no mining, forking or propagation") {
  const RunResult r = run_training(SystemParams{}, 8, Mode::Vanilla);
  for (const auto& e : r.epochs) {
    CHECK(e.fork_attempts == 1);
    CHECK(e.breakdown.t_bg == 0.0);
    CHECK(e.breakdown.t_bp == 0.0);
    CHECK_FALSE(e.block);
  }
  CHECK(r.rewards.total_data_rewards() == 0.0);
}

TEST_CASE("slow mining almost never forks") {
  SystemParams p;
  p.n_miners = 2;
  p.lambda = 1e-3;
  p.n_devices = 3;
  Simulator sim(p, 5, Mode::BlockFL);
  int forks = 0;
  for (int e = 0; e < 10'000; ++e) forks += sim.run_epoch().fork_attempts - 1;
  CHECK(static_cast<double>(forks) / 1e4 < 1e-3);
}

TEST_CASE("fork attempts follow the geometric law") {
  SystemParams p = fast_params();
  p.lambda = 1.0;
  p.t_ack_wait_s = 1e-9;
  Simulator sim(p, 6, Mode::BlockFL);
  const int n = 5000;
  double sum = 0.0, sq = 0.0;
  for (int e = 0; e < n; ++e) {
    const double a = sim.run_epoch().fork_attempts;
    sum += a;
    sq += a * a;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / (n - 1));
  const double expected = std::exp(p.lambda * (p.n_miners - 1) * link_propagation_delay(p));
  CHECK(std::abs(mean - expected) < 3 * se);
}

TEST_CASE("ledgers stay consistent and rewards are conserved") {
  SystemParams p = fast_params();
  p.lambda = 1.5;
  Simulator sim(p, 9, Mode::BlockFL);
  double expected_data = 0.0;
  std::set<std::uint64_t> digests;
  for (int e = 0; e < 60; ++e) {
    const EpochTrace tr = sim.run_epoch();
    std::set<int> ids;
    for (const auto& u : tr.block->body) {
      CHECK(ids.insert(u.device_id).second);
      expected_data += p.reward_rate * static_cast<double>(u.n_samples);
    }
    CHECK(digests.insert(digest(*tr.block)).second);
  }
  for (int m = 1; m <= p.n_miners; ++m) {
    const Ledger& l = sim.ledger(m);
    CHECK(l.size() == 61);
    CHECK(l.verify_chain());
    CHECK(l.tip_digest() == sim.ledger(1).tip_digest());
  }
  // Only blocks on the chain were paid: one per epoch, never a forked attempt.
  CHECK(digests.size() == 60);
  CHECK(sim.rewards().total_data_rewards() == doctest::Approx(expected_data));
  for (const auto& [_, v] : sim.rewards().data_rewards()) CHECK(v >= 0.0);
  CHECK(sim.rewards().total_mining_rewards() <= sim.rewards().total_data_rewards());
}

TEST_CASE("forged sample counts never reach a block") {
  SystemParams p;
  p.forged_devices = 3;
  Simulator sim(p, 12, Mode::BlockFL);
  for (int e = 0; e < 100; ++e) {
    const EpochTrace tr = sim.run_epoch();
    CHECK(tr.rejected_devices == std::vector<int>{1, 2, 3});
    for (const auto& u : tr.block->body) CHECK(u.device_id > 3);
    CHECK(tr.block->body.size() == 7);
  }
}

TEST_CASE("malfunction injection examples") {
  SystemParams p;
  p.malfunction_enabled = true;
  const Vector agg = Vector::LinSpaced(5, -1.0, 1.0);
  Associations a;
  a.miner_of = {1, 2, 2, 3, 1, 3};
  const std::vector<int> active{1, 2, 3};
  Rng rng(1);

  p.malfunction_prob = 0.0;
  for (const Vector& v : inject_malfunction(agg, a, active, rng, p)) CHECK(v == agg);

  p.malfunction_prob = 1.0;
  p.malfunction_var = 0.0;
  std::vector<MalfunctionEvent> events;
  for (const Vector& v : inject_malfunction(agg, a, active, rng, p, &events))
    CHECK(v == (agg.array() - 0.1).matrix());
  CHECK(events.size() == 3);
}

TEST_CASE("malfunction only touches the failing miner's devices") {
  SystemParams p;
  p.malfunction_enabled = true;
  p.malfunction_prob = 0.3;
  const Vector agg = Vector::Constant(4, 0.5);
  Associations a;
  a.miner_of = {1, 2, 3, 4, 5, 1, 2, 3, 4, 5};
  const std::vector<int> active{1, 2, 3, 4, 5};
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<MalfunctionEvent> events;
    const auto views = inject_malfunction(agg, a, active, rng, p, &events);
    std::set<int> failed;
    for (const auto& e : events) failed.insert(e.miner_id);
    for (std::size_t i = 0; i < views.size(); ++i) {
      if (failed.contains(a.miner_of[i])) CHECK(views[i] != agg);
      else CHECK(views[i] == agg);
    }
  }
}

TEST_CASE("malfunction rate matches its probability") {
  SystemParams p;
  p.malfunction_enabled = true;
  Associations a;
  a.miner_of = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const std::vector<int> active{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  Rng rng(3);
  int events = 0;
  for (int e = 0; e < 1000; ++e) {
    std::vector<MalfunctionEvent> ev;
    inject_malfunction(Vector::Zero(3), a, active, rng, p, &ev);
    events += static_cast<int>(ev.size());
  }
  const double n = 1e4;
  CHECK(std::abs(events / n - 0.05) < 3 * binomial_se(0.05, n));
}

TEST_CASE("distorted devices heal through federation") {
  SystemParams p;
  p.malfunction_enabled = true;
  const RunResult r = run_training(p, 17, Mode::BlockFL);
  bool any = false;
  for (const auto& e : r.epochs) any = any || !e.malfunction_events.empty();
  CHECK(any);
  CHECK(r.test.accuracy > 0.9);
}

TEST_CASE("energy threshold examples") {
  SystemParams p;
  Rng rng(4);
  p.energy_threshold = 0.0;
  for (int i = 0; i < 100; ++i) CHECK(apply_energy_threshold(10, rng, p).size() == 10);

  p.energy_threshold = 1.0;
  for (int i = 0; i < 100; ++i) CHECK(apply_energy_threshold(10, rng, p).empty());
  Simulator sim(p, 1, Mode::BlockFL);
  CHECK_THROWS_AS(sim.run_epoch(), NoActiveMiners);

  p.energy_threshold = 0.5;
  const int n = 10'000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k = static_cast<double>(apply_energy_threshold(10, rng, p).size());
    sum += k;
    sq += k * k;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / (n - 1));
  CHECK(std::abs(mean - 5.0) < 3 * se);
}

TEST_CASE("epochs without active miners are retried") {
  SystemParams p = fast_params();
  p.n_miners = 2;
  p.energy_threshold = 0.8;
  const RunResult r = run_training(p, 2, Mode::BlockFL);
  int aborted = 0;
  for (const auto& e : r.epochs) {
    aborted += e.aborted_attempts;
    CHECK_FALSE(e.active_miners.empty());
  }
  CHECK(aborted > 0);
  CHECK(r.converged_at.has_value());
}

TEST_CASE("colocated miners never serve their own device") {
  SystemParams p;
  p.colocated_miners = true;
  Simulator sim(p, 3, Mode::BlockFL);
  for (int e = 0; e < 50; ++e) {
    const EpochTrace tr = sim.run_epoch();
    for (std::size_t i = 0; i < tr.associations.miner_of.size(); ++i)
      CHECK(tr.associations.miner_of[i] != static_cast<int>(i) + 1);
  }
}

TEST_CASE("sticky association keeps the first map") {
  SystemParams p;
  p.sticky_association = true;
  Simulator sim(p, 3, Mode::BlockFL);
  const auto first = sim.run_epoch().associations.miner_of;
  for (int e = 0; e < 20; ++e) CHECK(sim.run_epoch().associations.miner_of == first);
}

TEST_CASE("epoch cap of one yields one trace") {
  SystemParams p;
  p.max_epochs = 1;
  const RunResult r = run_training(p, 1, Mode::BlockFL);
  CHECK(r.epochs.size() == 1);
  CHECK_FALSE(r.converged_at.has_value());
}

TEST_CASE("standalone training on ten samples loses to federation") {
  SystemParams p;
  p.samples_min = p.samples_max = 10;
  p.max_epochs = 40;
  p.epsilon = 1e-12;
  int federated_wins = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const RunResult fed = run_training(p, 100 + s, Mode::BlockFL);
    const RunResult solo = run_training(p, 100 + s, Mode::Standalone);
    REQUIRE(fed.epochs.size() == solo.epochs.size());
    federated_wins += fed.test.mse < solo.test.mse ? 1 : 0;
  }
  CHECK(federated_wins > seeds / 2);
}

TEST_CASE("runs are determined by seed and parameters") {
  SystemParams p;
  p.malfunction_enabled = true;
  const RunResult a = run_training(p, 77, Mode::BlockFL);
  const RunResult b = run_training(p, 77, Mode::BlockFL);
  std::ostringstream ta, tb;
  write_trace(a, ta);
  write_trace(b, tb);
  CHECK(ta.str() == tb.str());
  CHECK(a.completion_latency == b.completion_latency);
  const RunResult c = run_training(p, 78, Mode::BlockFL);
  CHECK(c.completion_latency != a.completion_latency);
}

TEST_CASE("golden trace regression") {
  const std::filesystem::path golden = std::filesystem::path(BLOCKFL_TEST_DATA_DIR) / "golden_trace.jsonl";
  const RunResult r = run_training(SystemParams{}, 2024, Mode::BlockFL);
  std::ostringstream now;
  write_trace(r, now);
  if (std::getenv("BLOCKFL_UPDATE_GOLDEN")) {
    std::ofstream(golden, std::ios::binary) << now.str();
  }
  std::ifstream in(golden, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing ", golden.string());
  std::stringstream stored;
  stored << in.rdbuf();
  CHECK(stored.str() == now.str());
}

TEST_CASE("overtake race against the gambler's ruin oracle") {
  auto oracle = [](int z, int n) { return std::pow(1.0 / n, z + 1); };
  Rng rng(31);
  const std::int64_t reps = 100'000;

  const OvertakeEstimate even = simulate_overtake(0, 1, 0.5, reps, rng);
  const double truncated_walk = 100.0 / 101.0;
  CHECK(std::abs(even.probability - truncated_walk) < 3 * binomial_se(truncated_walk, reps));
  CHECK(even.truncated + static_cast<std::int64_t>(std::llround(even.probability * reps)) == reps);

  for (int z : {0, 1, 2}) {
    const OvertakeEstimate e = simulate_overtake(z, 9, 0.5, reps, rng);
    const double q = oracle(z, 9);
    CHECK(std::abs(e.probability - q) < 3 * binomial_se(q, reps));
  }
  const OvertakeEstimate far = simulate_overtake(6, 9, 0.5, reps, rng);
  CHECK(far.probability <= 1e-4);
  CHECK_THROWS_AS(simulate_overtake(-1, 9, 0.5, 10, rng), std::invalid_argument);
  CHECK_THROWS_AS(simulate_overtake(0, 0, 0.5, 10, rng), std::invalid_argument);
}

}
