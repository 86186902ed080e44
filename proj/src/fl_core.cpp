#include "blockfl/fl_core.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "blockfl/latency_model.hpp"
#include "blockfl/rng.hpp"

namespace blockfl {

namespace {

void check_dim(const Vector& a, const Vector& b, const char* where) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(where) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
}

std::vector<std::size_t> device_order(std::span<const LocalUpdate> updates) {
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].device_id < updates[b].device_id;
  });
  return order;
}

double total_samples(std::span<const LocalUpdate> updates) {
  std::uint64_t n = 0;
  for (const auto& u : updates) n += u.n_samples;
  return static_cast<double>(n);
}

}  // namespace

bool all_finite(const Vector& v) { return v.allFinite(); }

SyntheticData generate_dataset(std::uint64_t seed, int n_devices,
                               std::span<const int> sample_counts, int dim,
                               double noise_std, int test_samples) {
  if (dim < 1) throw std::invalid_argument("generate_dataset: dim must be >= 1");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("generate_dataset: noise_std must be >= 0");
  if (n_devices < 1) throw std::invalid_argument("generate_dataset: n_devices must be >= 1");
  if (sample_counts.size() != static_cast<std::size_t>(n_devices))
    throw std::invalid_argument("generate_dataset: one sample count per device required");
  if (std::any_of(sample_counts.begin(), sample_counts.end(), [](int c) { return c < 1; }))
    throw std::invalid_argument("generate_dataset: every sample count must be >= 1");
  if (test_samples < 0) throw std::invalid_argument("generate_dataset: test_samples < 0");

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw_vector = [&] {
    Vector v(dim);
    for (int j = 0; j < dim; ++j) v[j] = normal(rng);
    return v;
  };
  auto draw_sample = [&](const Vector& w_true) {
    RegressionSample s;
    s.x = draw_vector();
    s.y = s.x.dot(w_true) + noise_std * normal(rng);
    return s;
  };

  SyntheticData data;
  data.w_true = draw_vector();
  data.devices.reserve(n_devices);
  for (int i = 0; i < n_devices; ++i) {
    DeviceDataset d;
    d.device_id = i + 1;
    d.samples.reserve(sample_counts[i]);
    for (int k = 0; k < sample_counts[i]; ++k) d.samples.push_back(draw_sample(data.w_true));
    data.devices.push_back(std::move(d));
  }
  data.test_set.reserve(test_samples);
  for (int k = 0; k < test_samples; ++k) data.test_set.push_back(draw_sample(data.w_true));
  return data;
}

double loss(const Vector& w, std::span<const RegressionSample> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : samples) {
    check_dim(w, s.x, "loss");
    const double r = s.x.dot(w) - s.y;
    acc += 0.5 * r * r;
  }
  return acc / static_cast<double>(samples.size());
}

double loss(const Vector& w, std::span<const DeviceDataset> devices) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& d : devices) {
    acc += loss(w, d.samples) * static_cast<double>(d.size());
    n += d.size();
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

Vector sample_gradient(const Vector& w, const RegressionSample& sample) {
  check_dim(w, sample.x, "sample_gradient");
  return (sample.x.dot(w) - sample.y) * sample.x;
}

Vector gradient_sum(const Vector& w, const DeviceDataset& dataset) {
  Vector g = Vector::Zero(w.size());
  for (const auto& s : dataset.samples) g += sample_gradient(w, s);
  return g;
}

LocalUpdate local_epoch(const DeviceDataset& dataset, const GlobalModel& global,
                        const Vector& global_grad, double beta, std::uint64_t order_seed,
                        const SystemParams& params) {
  if (!(beta > 0.0)) throw std::invalid_argument("local_epoch: beta must be > 0");
  if (dataset.samples.empty()) throw std::invalid_argument("local_epoch: empty dataset");
  check_dim(global.w, global_grad, "local_epoch");

  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(order_seed);
  std::shuffle(order.begin(), order.end(), rng);

  const double step = beta / static_cast<double>(n);
  Vector w = global.w;
  for (std::size_t t = 0; t < n; ++t) {
    const RegressionSample& s = dataset.samples[order[t]];
    const Vector correction = sample_gradient(w, s) - sample_gradient(global.w, s);
    w -= step * (correction + global_grad);
  }

  LocalUpdate u;
  u.device_id = dataset.device_id;
  u.w = std::move(w);
  u.grad_sum = gradient_sum(global.w, dataset);
  u.n_samples = n;
  u.t_local = local_delay(static_cast<double>(n), params);
  u.epoch = global.epoch + 1;
  return u;
}

GlobalModel aggregate_global(const GlobalModel& prev, std::span<const LocalUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate_global: no updates");
  for (const auto& u : updates) check_dim(prev.w, u.w, "aggregate_global");
  const double n_total = total_samples(updates);

  Vector step = Vector::Zero(prev.w.size());
  for (std::size_t idx : device_order(updates)) {
    const LocalUpdate& u = updates[idx];
    step += (static_cast<double>(u.n_samples) / n_total) * (u.w - prev.w);
  }
  return GlobalModel{prev.w + step, prev.epoch + 1};
}

Vector global_gradient(std::span<const LocalUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("global_gradient: no updates");
  const Eigen::Index dim = updates.front().grad_sum.size();
  Vector g = Vector::Zero(dim);
  for (std::size_t idx : device_order(updates)) {
    const LocalUpdate& u = updates[idx];
    check_dim(g, u.grad_sum, "global_gradient");
    g += u.grad_sum;
  }
  return g / total_samples(updates);
}

bool converged(const GlobalModel& prev, const GlobalModel& curr, double epsilon) {
  check_dim(prev.w, curr.w, "converged");
  return (curr.w - prev.w).norm() <= epsilon;
}

TestMetrics test_accuracy(const GlobalModel& model, std::span<const RegressionSample> test_set,
                          double threshold) {
  if (test_set.empty()) throw std::invalid_argument("test_accuracy: empty test set");
  if (!(threshold > 0.0)) throw std::invalid_argument("test_accuracy: threshold must be > 0");
  std::size_t hits = 0;
  double sq = 0.0;
  for (const auto& s : test_set) {
    check_dim(model.w, s.x, "test_accuracy");
    const double r = s.x.dot(model.w) - s.y;
    if (std::abs(r) <= threshold) ++hits;
    sq += r * r;
  }
  const auto n = static_cast<double>(test_set.size());
  return TestMetrics{static_cast<double>(hits) / n, sq / n};
}

}  // namespace blockfl
