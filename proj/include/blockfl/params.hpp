#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace blockfl {

// Which delay stands in for the winner's propagation delay inside the
// closed-form optimal block rate.
enum class PropagationReading {
  MaxDelay,    // max_j { t_bp,j , T_a,wait }, the same value the epoch latency uses
  SingleLink,  // one winner-to-miner link, t_bp,j
  Total,       // sum of t_bp,j over every non-winning miner
};

std::string to_string(PropagationReading reading);

// All scalar inputs of the protocol and its latency model. Internal units are
// SI: bits, Hz, seconds, linear SNR. The config loader converts from the
// kbit/kHz/GHz/ms/dB keys users write.
struct SystemParams {
  int n_devices = 10;
  int n_miners = 10;

  double sample_bits = 100e3;  // delta_d
  double update_bits = 5e3;    // delta_m
  double header_bits = 200e3;  // h
  double clock_hz = 1e9;       // f_c

  double bandwidth_up_hz = 300e3;
  double bandwidth_dn_hz = 300e3;
  double bandwidth_miner_hz = 300e3;

  double snr_up = 10.0;
  double snr_dn = 10.0;
  double snr_miner = 10.0;

  double t_wait_s = 0.05;
  double t_ack_wait_s = 0.5;

  double lambda = 0.5;  // block generation rate, 1/s
  double beta = 0.5;
  double epsilon = 1e-3;

  double energy_threshold = 0.0;

  bool malfunction_enabled = false;
  double malfunction_prob = 0.05;
  double malfunction_mean = -0.1;
  double malfunction_var = 0.01;

  // Synthetic regression task.
  int dim = 10;
  double noise_std = 0.1;
  int samples_min = 10;
  int samples_max = 50;
  int test_samples = 500;
  double accuracy_threshold = 0.5;

  int max_epochs = 200;
  double verify_tolerance = 1e-6;
  double reward_rate = 1.0;

  // Number of devices (lowest ids first) that inflate their claimed sample
  // count by forgery_factor every epoch.
  int forged_devices = 0;
  double forgery_factor = 10.0;

  bool colocated_miners = false;    // miners are the devices themselves
  bool sticky_association = false;  // keep the first epoch's device-to-miner map
  PropagationReading propagation_reading = PropagationReading::MaxDelay;

  std::int64_t max_fork_attempts = 1'000'000;

  // Every violated invariant, one message each. Empty means valid.
  [[nodiscard]] std::vector<std::string> validate() const;
};

double db_to_linear(double db);

}  // namespace blockfl
