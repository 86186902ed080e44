#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "blockfl/params.hpp"

namespace blockfl {

using Vector = Eigen::VectorXd;

struct RegressionSample {
  Vector x;
  double y = 0.0;
};

struct DeviceDataset {
  int device_id = 0;
  std::vector<RegressionSample> samples;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
};

struct GlobalModel {
  Vector w;
  std::uint64_t epoch = 0;
};

// One device's per-epoch upload.
struct LocalUpdate {
  int device_id = 0;
  Vector w;         // local weight after the last local iteration
  Vector grad_sum;  // sum of per-sample gradients at the global weight
  std::uint64_t n_samples = 0;  // claimed N_i
  double t_local = 0.0;         // reported computation time, seconds
  std::uint64_t epoch = 0;
};

struct SyntheticData {
  std::vector<DeviceDataset> devices;
  std::vector<RegressionSample> test_set;
  Vector w_true;
};

// x ~ N(0, I), y = x.w_true + N(0, noise_std^2), w_true ~ N(0, I).
SyntheticData generate_dataset(std::uint64_t seed, int n_devices,
                               std::span<const int> sample_counts, int dim,
                               double noise_std, int test_samples = 0);

// Mean of (x.w - y)^2 / 2 over the samples.
double loss(const Vector& w, std::span<const RegressionSample> samples);
double loss(const Vector& w, std::span<const DeviceDataset> devices);

Vector sample_gradient(const Vector& w, const RegressionSample& sample);

// sum_k grad f_k(w) over one device's samples.
Vector gradient_sum(const Vector& w, const DeviceDataset& dataset);

// N_i variance-reduced iterations starting from the global weight, visiting
// the samples in a permutation fixed by `order_seed`. `global_grad` is the
// population mean gradient at `global.w`.
LocalUpdate local_epoch(const DeviceDataset& dataset, const GlobalModel& global,
                        const Vector& global_grad, double beta, std::uint64_t order_seed,
                        const SystemParams& params);

// w + sum_i (N_i / N_S)(w_i - w), summed in device_id order.
GlobalModel aggregate_global(const GlobalModel& prev, std::span<const LocalUpdate> updates);

// sum_i grad_sum_i / N_S, summed in device_id order.
Vector global_gradient(std::span<const LocalUpdate> updates);

bool converged(const GlobalModel& prev, const GlobalModel& curr, double epsilon);

struct TestMetrics {
  double accuracy = 0.0;  // fraction of |x.w - y| <= threshold
  double mse = 0.0;       // mean (x.w - y)^2
};

TestMetrics test_accuracy(const GlobalModel& model, std::span<const RegressionSample> test_set,
                          double threshold);

bool all_finite(const Vector& v);

}  // namespace blockfl
