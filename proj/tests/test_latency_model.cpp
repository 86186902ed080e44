#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "blockfl/latency_model.hpp"
#include "blockfl/rng.hpp"

using namespace blockfl;

namespace {

// Reference system evaluated by hand.
constexpr double kRate = 300e3 * 3.4594316186372973;  // 300 kHz * log2(11)
constexpr double kLink = 250e3 / kRate;

// Scales every bit quantity by `bits` and every frequency by `hz`.
SystemParams scaled(double bits, double hz) {
  SystemParams p;
  p.sample_bits *= bits;
  p.update_bits *= bits;
  p.header_bits *= bits;
  p.clock_hz *= hz;
  p.bandwidth_up_hz *= hz;
  p.bandwidth_dn_hz *= hz;
  p.bandwidth_miner_hz *= hz;
  return p;
}

// Expected latency written out independently of the library.
double expected_oracle(double lambda, double t_wait, double t_bp, double sum_bp, int n_miners,
                       double t_dn, double t_global) {
  return (t_wait + t_bp + 1.0 / (lambda * n_miners)) * std::exp(lambda * sum_bp) + t_dn + t_global;
}

int local_minima(const std::vector<double>& y) {
  int count = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool left = i == 0 || y[i] < y[i - 1];
    const bool right = i + 1 == y.size() || y[i] < y[i + 1];
    if (left && right) ++count;
  }
  return count;
}

}  // namespace

TEST_SUITE("latency_model") {

TEST_CASE("shannon rate examples") {
  CHECK(shannon_rate(300e3, 0.0) == 0.0);
  CHECK(shannon_rate(300e3, 10.0) == doctest::Approx(1.0378e6).epsilon(1e-4));
  CHECK(shannon_rate(1.0, 1.0) == 1.0);
  CHECK_THROWS_AS(shannon_rate(0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(shannon_rate(1.0, -1.0), std::invalid_argument);
}

TEST_CASE("computation delays") {
  const SystemParams p;
  CHECK(local_delay(50, p) == doctest::Approx(5e-3));
  CHECK(local_delay(0, p) == 0.0);
  CHECK(local_delay(84, p) == doctest::Approx(2 * local_delay(42, p)));
  CHECK(global_delay(p) == doctest::Approx(50e-6));
  SystemParams one = p;
  one.n_devices = 1;
  CHECK(global_delay(one) == doctest::Approx(p.update_bits / p.clock_hz));
  SystemParams many = p;
  many.n_devices = 30;
  CHECK(global_delay(many) == doctest::Approx(3 * global_delay(p)));
}

TEST_CASE("link delays") {
  const SystemParams p;
  CHECK(uplink_delay(p) == doctest::Approx(4.82e-3).epsilon(1e-3));
  CHECK(downlink_delay(p) == doctest::Approx(0.2409).epsilon(1e-3));
  CHECK(link_propagation_delay(p) == doctest::Approx(kLink).epsilon(1e-12));
  double prev_up = uplink_delay(p), prev_dn = downlink_delay(p);
  for (double snr : {100.0, 1e4, 1e8, 1e16}) {
    SystemParams q = p;
    q.snr_up = q.snr_dn = snr;
    CHECK(uplink_delay(q) < prev_up);
    CHECK(downlink_delay(q) < prev_dn);
    prev_up = uplink_delay(q);
    prev_dn = downlink_delay(q);
  }
  CHECK(prev_up < 0.1 * uplink_delay(p));
}

TEST_CASE("cross verification examples") {
  SystemParams p;
  const std::vector<int> uniform(9, 1);
  const double t_local = 5e-3, t_up = uplink_delay(p);
  const double exchange = 9 * p.update_bits / kRate;
  CHECK(exchange == doctest::Approx(43.4e-3).epsilon(1e-3));
  CHECK(p.t_wait_s - (t_local + t_up) == doctest::Approx(40.2e-3).epsilon(1e-3));
  CHECK(cross_verification_delay(t_local, t_up, p, uniform) == doctest::Approx(exchange));

  p.t_wait_s = 100.0;
  CHECK(cross_verification_delay(t_local, t_up, p, uniform) ==
        doctest::Approx(100.0 - t_local - t_up));
  p.t_wait_s = 0.0;
  CHECK(cross_verification_delay(t_local, t_up, p, uniform) == doctest::Approx(exchange));
  CHECK(cross_verification_delay(t_local, t_up, p, {}) == 0.0);
}

TEST_CASE("block propagation examples") {
  SystemParams p;
  CHECK(block_propagation_delay(10, p) == doctest::Approx(0.5));
  p.t_ack_wait_s = 0.0;
  CHECK(block_propagation_delay(10, p) == doctest::Approx(kLink));
  CHECK(block_propagation_delay(1, p) == 0.0);
  const std::vector<double> links{0.1, 0.7, 0.3};
  CHECK(block_propagation_delay(links, 0.5) == 0.7);
  CHECK(block_propagation_delay(links, 0.9) == 0.9);
  CHECK(block_propagation_delay(std::vector<double>{}, 0.9) == 0.0);
}

TEST_CASE("delays are invariant under consistent unit rescaling") {
  const SystemParams base;
  const SystemParams k = scaled(1e-3, 1e-3);
  const SystemParams m = scaled(1e6, 1e6);
  for (const SystemParams* q : {&k, &m}) {
    CHECK(local_delay(37, *q) == doctest::Approx(local_delay(37, base)).epsilon(1e-12));
    CHECK(global_delay(*q) == doctest::Approx(global_delay(base)).epsilon(1e-12));
    CHECK(uplink_delay(*q) == doctest::Approx(uplink_delay(base)).epsilon(1e-12));
    CHECK(downlink_delay(*q) == doctest::Approx(downlink_delay(base)).epsilon(1e-12));
    CHECK(link_propagation_delay(*q) == doctest::Approx(link_propagation_delay(base)).epsilon(1e-12));
    const std::vector<int> loads{1, 2, 0, 3};
    CHECK(cross_verification_delay(0.01, 0.002, *q, loads) ==
          doctest::Approx(cross_verification_delay(0.01, 0.002, base, loads)).epsilon(1e-12));
    CHECK(expected_epoch_latency(*q) == doctest::Approx(expected_epoch_latency(base)).epsilon(1e-12));
  }
}

TEST_CASE("mining time draws") {
  Rng rng(17);
  const int n = 100'000;
  double sum = 0.0;
  int above = 0;
  const double lambda = 2.0, x = 0.8;
  for (int i = 0; i < n; ++i) {
    const double t = sample_mining_time(rng, lambda);
    CHECK_MESSAGE(t >= 0.0, "negative draw");
    sum += t;
    above += t > x ? 1 : 0;
  }
  CHECK(std::abs(sum / n - 0.5) / 0.5 < 0.01);
  const double ccdf = std::exp(-lambda * x);
  const double se = std::sqrt(ccdf * (1 - ccdf) / n);
  CHECK(std::abs(static_cast<double>(above) / n - ccdf) < 3 * se);
  CHECK_THROWS_AS(sample_mining_time(rng, 0.0), std::invalid_argument);
}

TEST_CASE("winner delay is the minimum of the race") {
  CHECK(winner_expected_delay(1.0, 10) == doctest::Approx(0.1));
  CHECK(winner_expected_delay(0.25, 1) == doctest::Approx(4.0));
  Rng rng(23);
  for (int n_miners : {1, 3, 10}) {
    const double lambda = 0.7;
    double sum = 0.0;
    for (int r = 0; r < 100'000; ++r) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n_miners; ++j) best = std::min(best, sample_mining_time(rng, lambda));
      sum += best;
    }
    const double expected = winner_expected_delay(lambda, n_miners);
    CHECK(std::abs(sum / 1e5 - expected) / expected < 0.01);
  }
}

TEST_CASE("fork probability examples and race oracle") {
  const std::vector<double> links(9, kLink);
  CHECK(fork_probability_analytic(1e-12, links) < 1e-10);
  CHECK(fork_probability_analytic(3.0, std::vector<double>(9, 0.0)) == 0.0);
  double prev = 0.0;
  for (double lambda : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    const double pf = fork_probability_analytic(lambda, links);
    CHECK(pf > prev);
    CHECK(pf < 1.0);
    prev = pf;
  }

  // Brute-force race: a fork means another miner finishes within its
  // propagation window after the winner.
  const std::vector<double> uneven{0.05, 0.2, 0.1, 0.4};
  for (double lambda : {0.3, 1.0}) {
    Rng rng(derive_seed(99, static_cast<std::uint64_t>(lambda * 10)));
    std::exponential_distribution<double> mine(lambda);
    const int n = 100'000;
    int forks = 0;
    for (int r = 0; r < n; ++r) {
      const double winner = mine(rng);
      bool fork = false;
      for (double d : uneven) {
        const double t = winner + mine(rng);  // memoryless residual
        if (t - winner <= d) fork = true;
      }
      forks += fork ? 1 : 0;
    }
    const double pf = fork_probability_analytic(lambda, uneven);
    const double se = std::sqrt(pf * (1 - pf) / n);
    CHECK(std::abs(static_cast<double>(forks) / n - pf) < 3 * se);
  }
}

TEST_CASE("realized epoch latency structure") {
  LatencyBreakdown c{0.005, 0.004, 0.04, 0.2, 0.5, 0.24, 5e-5, 1, 0.0};
  const double five = 0.005 + 0.004 + 0.04 + 0.2 + 0.5;
  CHECK(epoch_latency_realized(c, 1) == doctest::Approx(five + 0.24 + 5e-5));
  CHECK(epoch_latency_realized(c, 3) == doctest::Approx(3 * five + 0.24 + 5e-5));
  CHECK_THROWS_AS(epoch_latency_realized(c, 0), std::invalid_argument);
}

TEST_CASE("geometric attempt count reproduces the expected latency") {
  const SystemParams p;
  const ExpectedLatencyTerms t = expected_latency_terms(p);
  const double lambda = 0.5;
  const double p_fork = fork_probability_analytic(lambda, std::vector<double>(9, kLink));
  Rng rng(5);
  std::geometric_distribution<int> failures(1.0 - p_fork);
  const int n = 100'000;
  std::vector<double> lat(n);
  for (int i = 0; i < n; ++i) {
    const int n_fork = 1 + failures(rng);
    // Per-attempt components are means over the attempts.
    double bg = 0.0;
    for (int k = 0; k < n_fork; ++k) bg += sample_mining_time(rng, lambda * p.n_miners);
    LatencyBreakdown c{};
    c.t_cross = t.t_wait;
    c.t_bg = bg / n_fork;
    c.t_bp = t.t_bp_winner;
    c.t_dn = t.t_dn;
    c.t_global = t.t_global;
    lat[i] = epoch_latency_realized(c, n_fork);
  }
  double mean = 0.0;
  for (double v : lat) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : lat) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (n - 1) / n);
  CHECK(std::abs(mean - expected_epoch_latency(t, lambda)) < 3 * se);
}

TEST_CASE("expected latency terms and oracle") {
  const SystemParams p;
  const ExpectedLatencyTerms t = expected_latency_terms(p);
  CHECK(t.t_wait == 0.05);
  CHECK(t.t_bp_winner == doctest::Approx(0.5));
  CHECK(t.sum_link_bp == doctest::Approx(9 * kLink));
  CHECK(t.sum_link_bp == doctest::Approx(2.168).epsilon(1e-3));
  for (double lambda : {0.01, 0.2, 1.0, 3.0})
    CHECK(expected_epoch_latency(t, lambda) ==
          doctest::Approx(expected_oracle(lambda, 0.05, 0.5, 9 * kLink, 10, 250e3 / kRate,
                                          50e-6)));
  CHECK(expected_epoch_latency(t, 1e-6) > 1e4);
  CHECK(expected_epoch_latency(t, 50.0) > 1e30);
  CHECK_THROWS_AS(expected_epoch_latency(t, 0.0), std::invalid_argument);

  SystemParams single = p;
  single.n_miners = 1;
  const ExpectedLatencyTerms s = expected_latency_terms(single);
  CHECK(s.t_bp_winner == 0.0);
  CHECK(s.sum_link_bp == 0.0);
}

TEST_CASE("expected latency is unimodal on a log grid") {
  for (int n_miners : {2, 5, 10, 20}) {
    SystemParams p;
    p.n_miners = n_miners;
    const ExpectedLatencyTerms t = expected_latency_terms(p);
    std::vector<double> y;
    for (int i = 0; i < 50; ++i) y.push_back(expected_epoch_latency(t, 1e-3 * std::pow(1e5, i / 49.0)));
    CHECK(local_minima(y) == 1);
  }
}

TEST_CASE("closed-form rate examples") {
  CHECK(optimal_lambda_closed_form(0.4, 0.0, 1) ==
        doctest::Approx(2.0 / (0.4 * (1.0 + std::sqrt(5.0)))));
  CHECK(optimal_lambda_closed_form(0.8, 0.05, 10) < optimal_lambda_closed_form(0.4, 0.05, 10));
  CHECK(std::isnan(optimal_lambda_closed_form(0.0, 0.05, 10)));

  const SystemParams p;
  const OptimalLambda opt = optimal_lambda(p);
  CHECK(opt.propagation_used == doctest::Approx(0.5));
  CHECK(opt.closed_form == doctest::Approx(0.5189).epsilon(1e-3));
  CHECK(opt.numeric == doctest::Approx(0.2126).epsilon(1e-3));
  CHECK_FALSE(opt.fallback);
}

TEST_CASE("closed form coincides with the numeric minimizer when one link carries the fork risk") {
  // With two miners and no ACK floor, the propagation delay in the per-attempt
  // term, the fork exponent and the closed form all refer to one link.
  for (double t_link : {0.05, 0.2, 0.8})
    for (double t_wait : {0.0, 0.05, 0.5}) {
      ExpectedLatencyTerms t;
      t.t_wait = t_wait;
      t.t_bp_winner = t_link;
      t.sum_link_bp = t_link;
      t.n_miners = 2;
      const double closed = optimal_lambda_closed_form(t_link, t_wait, 2);
      const double numeric = numeric_optimal_lambda(t);
      CHECK(std::abs(closed - numeric) / numeric < 1e-6);
    }
}

TEST_CASE("stationary root agrees with the golden-section oracle across miners and waits") {
  for (int n_miners : {2, 10, 50})
    for (double t_wait : {0.01, 0.05, 0.5}) {
      SystemParams p;
      p.n_miners = n_miners;
      p.t_wait_s = t_wait;
      const ExpectedLatencyTerms t = expected_latency_terms(p);
      const double numeric = numeric_optimal_lambda(t);
      CHECK(std::abs(stationary_lambda(t) - numeric) / numeric < 1e-6);
      const double f = expected_epoch_latency(t, numeric);
      CHECK(f <= expected_epoch_latency(t, numeric * 1.01));
      CHECK(f <= expected_epoch_latency(t, numeric / 1.01));
    }
}

TEST_CASE("closed form falls back to the numeric rate without propagation delay") {
  SystemParams p;
  p.n_miners = 1;
  const OptimalLambda opt = optimal_lambda(p);
  CHECK(opt.fallback);
  CHECK(opt.closed_form == opt.numeric);
  CHECK(opt.relative_gap == 0.0);
}

TEST_CASE("propagation reading switch") {
  SystemParams p;
  p.propagation_reading = PropagationReading::SingleLink;
  CHECK(optimal_lambda(p).propagation_used == doctest::Approx(kLink));
  p.propagation_reading = PropagationReading::Total;
  CHECK(optimal_lambda(p).propagation_used == doctest::Approx(9 * kLink));
  CHECK(to_string(PropagationReading::MaxDelay) == "max");
}

}
