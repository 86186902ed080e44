#pragma once

#include <span>

#include "blockfl/params.hpp"
#include "blockfl/rng.hpp"

namespace blockfl {

// Per-epoch delay decomposition seen from the observed device D_o. When an
// epoch forks, the per-attempt components hold the mean over all attempts so
// that `total` is exactly the realized-latency expression of the components.
struct LatencyBreakdown {
  double t_local = 0.0;
  double t_up = 0.0;
  double t_cross = 0.0;
  double t_bg = 0.0;
  double t_bp = 0.0;
  double t_dn = 0.0;
  double t_global = 0.0;
  int n_fork = 1;
  double total = 0.0;
};

// W * log2(1 + snr), bits per second.
double shannon_rate(double bandwidth_hz, double snr);

double local_delay(double n_samples, const SystemParams& p);
double global_delay(const SystemParams& p);
double uplink_delay(const SystemParams& p);
double downlink_delay(const SystemParams& p);

// Time to push one full block (h + delta_m * N_D) over one miner link.
double link_propagation_delay(const SystemParams& p);

// max{T_wait - (t_local + t_up), sum_j delta_m N_Mj / rate_m}, clamped at 0.
// `other_miner_loads` lists the association counts of every miner except the
// observed device's own miner.
double cross_verification_delay(double t_local, double t_up, const SystemParams& p,
                                std::span<const int> other_miner_loads);

// max over non-winning miners of max{t_bp,j, T_a,wait}; 0 when there are none.
double block_propagation_delay(std::span<const double> link_delays, double t_ack_wait);

// Convenience form for symmetric links among `active_miners` miners.
double block_propagation_delay(int active_miners, const SystemParams& p);

double sample_mining_time(Rng& rng, double lambda);

// E[min of n_miners Exp(lambda)] = 1 / (lambda * n_miners).
double winner_expected_delay(double lambda, int n_miners);

// 1 - exp(-lambda * sum(delays)).
double fork_probability_analytic(double lambda, std::span<const double> propagation_delays);

// Constant terms of the expected epoch latency under the synchronous-start
// approximation.
struct ExpectedLatencyTerms {
  double t_wait = 0.0;        // T_local + T_up + T_cross collapses to T_wait
  double t_bp_winner = 0.0;   // propagation delay paid per attempt
  double sum_link_bp = 0.0;   // sum_j t_bp,j, the fork exponent
  int n_miners = 1;
  double t_dn = 0.0;
  double t_global = 0.0;
};

ExpectedLatencyTerms expected_latency_terms(const SystemParams& p);

// (T_wait + T_bp + 1/(lambda N_M)) * exp(lambda * sum_j t_bp,j) + T_dn + T_global
double expected_epoch_latency(const ExpectedLatencyTerms& terms, double lambda);
double expected_epoch_latency(const SystemParams& p);

// N_fork * (T_local + T_up + T_cross + T_bg + T_bp) + T_dn + T_global
double epoch_latency_realized(const LatencyBreakdown& components, int n_fork);

struct OptimalLambda {
  double closed_form = 0.0;  // the closed-form rate under the selected reading
  double numeric = 0.0;      // golden-section minimizer of expected_epoch_latency
  double relative_gap = 0.0; // |closed_form - numeric| / numeric
  double propagation_used = 0.0;
  bool fallback = false;     // closed form undefined; `closed_form` holds `numeric`
};

// lambda* ~= 2 / (T_bp [1 + sqrt(1 + 4 N_M (1 + T_wait / T_bp))])
double optimal_lambda_closed_form(double t_bp, double t_wait, int n_miners);

// Stationary point of expected_epoch_latency, solved exactly.
double stationary_lambda(const ExpectedLatencyTerms& terms);

// Golden-section search over log(lambda) in [lo, hi].
double numeric_optimal_lambda(const ExpectedLatencyTerms& terms, double lo = 1e-4,
                              double hi = 1e3);

OptimalLambda optimal_lambda(const SystemParams& p);

}  // namespace blockfl
