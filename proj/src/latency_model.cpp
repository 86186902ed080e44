#include "blockfl/latency_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace blockfl {

double shannon_rate(double bandwidth_hz, double snr) {
  if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("shannon_rate: bandwidth must be > 0");
  if (!(snr >= 0.0)) throw std::invalid_argument("shannon_rate: snr must be >= 0");
  return bandwidth_hz * std::log2(1.0 + snr);
}

double local_delay(double n_samples, const SystemParams& p) {
  return p.sample_bits * n_samples / p.clock_hz;
}

double global_delay(const SystemParams& p) {
  return p.update_bits * p.n_devices / p.clock_hz;
}

double uplink_delay(const SystemParams& p) {
  return p.update_bits / shannon_rate(p.bandwidth_up_hz, p.snr_up);
}

double downlink_delay(const SystemParams& p) {
  return (p.header_bits + p.update_bits * p.n_devices) / shannon_rate(p.bandwidth_dn_hz, p.snr_dn);
}

double link_propagation_delay(const SystemParams& p) {
  return (p.header_bits + p.update_bits * p.n_devices) /
         shannon_rate(p.bandwidth_miner_hz, p.snr_miner);
}

double cross_verification_delay(double t_local, double t_up, const SystemParams& p,
                                std::span<const int> other_miner_loads) {
  const double rate = shannon_rate(p.bandwidth_miner_hz, p.snr_miner);
  double exchange = 0.0;
  for (int load : other_miner_loads) exchange += p.update_bits * load / rate;
  return std::max({p.t_wait_s - (t_local + t_up), exchange, 0.0});
}

double block_propagation_delay(std::span<const double> link_delays, double t_ack_wait) {
  if (link_delays.empty()) return 0.0;
  double worst = 0.0;
  for (double d : link_delays) worst = std::max({worst, d, t_ack_wait});
  return worst;
}

double block_propagation_delay(int active_miners, const SystemParams& p) {
  if (active_miners <= 1) return 0.0;
  return std::max(link_propagation_delay(p), p.t_ack_wait_s);
}

double sample_mining_time(Rng& rng, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("sample_mining_time: lambda must be > 0");
  return std::exponential_distribution<double>(lambda)(rng);
}

double winner_expected_delay(double lambda, int n_miners) {
  if (!(lambda > 0.0) || n_miners < 1)
    throw std::invalid_argument("winner_expected_delay: lambda > 0 and n_miners >= 1 required");
  return 1.0 / (lambda * n_miners);
}

double fork_probability_analytic(double lambda, std::span<const double> propagation_delays) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("fork_probability_analytic: lambda < 0");
  double total = 0.0;
  for (double d : propagation_delays) {
    if (!(d >= 0.0)) throw std::invalid_argument("fork_probability_analytic: negative delay");
    total += d;
  }
  return -std::expm1(-lambda * total);
}

ExpectedLatencyTerms expected_latency_terms(const SystemParams& p) {
  ExpectedLatencyTerms t;
  t.t_wait = p.t_wait_s;
  t.n_miners = p.n_miners;
  t.t_bp_winner = block_propagation_delay(p.n_miners, p);
  t.sum_link_bp = (p.n_miners - 1) * link_propagation_delay(p);
  t.t_dn = downlink_delay(p);
  t.t_global = global_delay(p);
  return t;
}

double expected_epoch_latency(const ExpectedLatencyTerms& t, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("expected_epoch_latency: lambda must be > 0");
  const double per_attempt = t.t_wait + t.t_bp_winner + 1.0 / (lambda * t.n_miners);
  return per_attempt * std::exp(lambda * t.sum_link_bp) + t.t_dn + t.t_global;
}

double expected_epoch_latency(const SystemParams& p) {
  return expected_epoch_latency(expected_latency_terms(p), p.lambda);
}

double epoch_latency_realized(const LatencyBreakdown& c, int n_fork) {
  if (n_fork < 1) throw std::invalid_argument("epoch_latency_realized: n_fork must be >= 1");
  const double attempt = c.t_local + c.t_up + c.t_cross + c.t_bg + c.t_bp;
  return n_fork * attempt + c.t_dn + c.t_global;
}

double optimal_lambda_closed_form(double t_bp, double t_wait, int n_miners) {
  if (!(t_bp > 0.0) || !(t_wait >= 0.0) || n_miners < 1)
    return std::numeric_limits<double>::quiet_NaN();
  const double root = std::sqrt(1.0 + 4.0 * n_miners * (1.0 + t_wait / t_bp));
  return 2.0 / (t_bp * (1.0 + root));
}

double stationary_lambda(const ExpectedLatencyTerms& t) {
  // d/dlambda of (a + 1/(lambda N)) e^{lambda S} vanishes where
  // S a N lambda^2 + S lambda - 1 = 0.
  if (!(t.sum_link_bp > 0.0)) return std::numeric_limits<double>::infinity();
  const double a = t.t_wait + t.t_bp_winner;
  const double s = t.sum_link_bp;
  return 2.0 / (s * (1.0 + std::sqrt(1.0 + 4.0 * a * t.n_miners / s)));
}

double numeric_optimal_lambda(const ExpectedLatencyTerms& terms, double lo, double hi) {
  if (!(lo > 0.0) || !(hi > lo)) throw std::invalid_argument("numeric_optimal_lambda: bad bracket");
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(lo);
  double b = std::log(hi);
  auto f = [&](double x) { return expected_epoch_latency(terms, std::exp(x)); };
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > 1e-12) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return std::exp(0.5 * (a + b));
}

OptimalLambda optimal_lambda(const SystemParams& p) {
  const ExpectedLatencyTerms terms = expected_latency_terms(p);
  OptimalLambda out;
  out.numeric = numeric_optimal_lambda(terms);

  const double link = p.n_miners > 1 ? link_propagation_delay(p) : 0.0;
  switch (p.propagation_reading) {
    case PropagationReading::MaxDelay: out.propagation_used = terms.t_bp_winner; break;
    case PropagationReading::SingleLink: out.propagation_used = link; break;
    case PropagationReading::Total: out.propagation_used = terms.sum_link_bp; break;
  }

  out.closed_form = optimal_lambda_closed_form(out.propagation_used, p.t_wait_s, p.n_miners);
  if (!std::isfinite(out.closed_form)) {
    out.closed_form = out.numeric;
    out.fallback = true;
  }
  out.relative_gap = std::abs(out.closed_form - out.numeric) / out.numeric;
  return out;
}

}  // namespace blockfl
