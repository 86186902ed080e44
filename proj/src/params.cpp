#include "blockfl/params.hpp"

#include <cmath>

namespace blockfl {

std::string to_string(PropagationReading reading) {
  switch (reading) {
    case PropagationReading::MaxDelay: return "max";
    case PropagationReading::SingleLink: return "link";
    case PropagationReading::Total: return "total";
  }
  return "max";
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

namespace {

void require(std::vector<std::string>& errors, bool ok, const std::string& message) {
  if (!ok) errors.push_back(message);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }
bool probability(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

}  // namespace

std::vector<std::string> SystemParams::validate() const {
  std::vector<std::string> e;
  require(e, n_devices >= 1, "n_devices must be >= 1");
  require(e, n_miners >= 1, "n_miners must be >= 1");
  require(e, positive(sample_bits), "sample_size must be > 0");
  require(e, positive(update_bits), "update_size must be > 0");
  require(e, positive(header_bits), "header_size must be > 0");
  require(e, positive(clock_hz), "clock must be > 0");
  require(e, positive(bandwidth_up_hz), "bandwidth_up must be > 0");
  require(e, positive(bandwidth_dn_hz), "bandwidth_dn must be > 0");
  require(e, positive(bandwidth_miner_hz), "bandwidth_miner must be > 0");
  require(e, positive(snr_up), "snr_up must be > 0 (linear)");
  require(e, positive(snr_dn), "snr_dn must be > 0 (linear)");
  require(e, positive(snr_miner), "snr_miner must be > 0 (linear)");
  require(e, positive(t_wait_s), "t_wait must be > 0");
  require(e, positive(t_ack_wait_s), "t_ack_wait must be > 0");
  require(e, positive(lambda), "lambda must be > 0");
  require(e, positive(beta), "beta must be > 0");
  require(e, positive(epsilon), "epsilon must be > 0");
  require(e, probability(energy_threshold), "theta_e must lie in [0, 1]");
  require(e, probability(malfunction_prob), "malfunction_prob must lie in [0, 1]");
  require(e, std::isfinite(malfunction_mean), "malfunction_mean must be finite");
  require(e, std::isfinite(malfunction_var) && malfunction_var >= 0.0,
          "malfunction_var must be >= 0");
  require(e, dim >= 1, "dim must be >= 1");
  require(e, std::isfinite(noise_std) && noise_std >= 0.0, "noise_std must be >= 0");
  require(e, samples_min >= 1 && samples_max >= samples_min,
          "samples_min/samples_max must satisfy 1 <= min <= max");
  require(e, test_samples >= 1, "test_samples must be >= 1");
  require(e, positive(accuracy_threshold), "accuracy_threshold must be > 0");
  require(e, max_epochs >= 1, "max_epochs must be >= 1");
  require(e, std::isfinite(verify_tolerance) && verify_tolerance > 0.0 && verify_tolerance < 1.0,
          "verify_tolerance must lie in (0, 1)");
  require(e, std::isfinite(reward_rate) && reward_rate >= 0.0, "reward_rate must be >= 0");
  require(e, forged_devices >= 0 && forged_devices <= n_devices,
          "forged_devices must lie in [0, n_devices]");
  require(e, std::isfinite(forgery_factor) && forgery_factor > 0.0,
          "forgery_factor must be > 0");
  require(e, !colocated_miners || n_miners >= 2,
          "colocated_miners needs n_miners >= 2");
  require(e, max_fork_attempts >= 1, "max_fork_attempts must be >= 1");
  return e;
}

}  // namespace blockfl
