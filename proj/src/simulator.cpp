#include "blockfl/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

namespace blockfl {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::BlockFL: return "blockfl";
    case Mode::Vanilla: return "vanilla";
    case Mode::Standalone: return "standalone";
  }
  return "blockfl";
}

std::optional<Mode> parse_mode(const std::string& text) {
  if (text == "blockfl") return Mode::BlockFL;
  if (text == "vanilla") return Mode::Vanilla;
  if (text == "standalone") return Mode::Standalone;
  return std::nullopt;
}

std::vector<int> apply_energy_threshold(int n_miners, Rng& rng, const SystemParams& p) {
  std::uniform_real_distribution<double> battery(0.0, 1.0);
  std::vector<int> active;
  for (int m = 1; m <= n_miners; ++m)
    if (battery(rng) >= p.energy_threshold) active.push_back(m);
  return active;
}

std::vector<Vector> inject_malfunction(const Vector& aggregate, const Associations& associations,
                                       std::span<const int> active_miners, Rng& rng,
                                       const SystemParams& p,
                                       std::vector<MalfunctionEvent>* events) {
  std::vector<Vector> views(associations.miner_of.size(), aggregate);
  std::bernoulli_distribution fails(p.malfunction_prob);
  std::normal_distribution<double> standard(0.0, 1.0);
  const double sd = std::sqrt(p.malfunction_var);
  for (int miner : active_miners) {
    if (!fails(rng)) continue;
    Vector noise(aggregate.size());
    for (Eigen::Index k = 0; k < noise.size(); ++k)
      noise[k] = p.malfunction_mean + sd * standard(rng);
    MalfunctionEvent ev{miner, associations.devices_of(miner)};
    for (int device : ev.devices) views[device - 1] = aggregate + noise;
    if (events) events->push_back(std::move(ev));
  }
  return views;
}

Simulator::Simulator(SystemParams params, std::uint64_t seed, Mode mode)
    : params_(std::move(params)), mode_(mode), rewards_(params_.reward_rate) {
  if (auto errors = params_.validate(); !errors.empty())
    throw std::invalid_argument("Simulator: " + errors.front());
  Rng data_rng(derive_seed(seed, streams::kData));
  std::uniform_int_distribution<int> count(params_.samples_min, params_.samples_max);
  std::vector<int> counts(params_.n_devices);
  for (int& c : counts) c = count(data_rng);
  data_ = generate_dataset(derive_seed(seed, streams::kData, 1), params_.n_devices, counts,
                           params_.dim, params_.noise_std, params_.test_samples);
  init(seed);
}

Simulator::Simulator(SystemParams params, SyntheticData data, std::uint64_t seed, Mode mode)
    : params_(std::move(params)), mode_(mode), data_(std::move(data)),
      rewards_(params_.reward_rate) {
  params_.n_devices = static_cast<int>(data_.devices.size());
  if (auto errors = params_.validate(); !errors.empty())
    throw std::invalid_argument("Simulator: " + errors.front());
  if (data_.devices.empty() || data_.w_true.size() != params_.dim)
    throw std::invalid_argument("Simulator: data does not match params.dim");
  init(seed);
}

void Simulator::init(std::uint64_t seed) {
  Rng pick(derive_seed(seed, streams::kData, 2));
  observed_ = std::uniform_int_distribution<int>(1, params_.n_devices)(pick);
  training_seed_ = derive_seed(seed, streams::kTraining);
  protocol_rng_.seed(derive_seed(seed, streams::kProtocol));
  global_ = GlobalModel{Vector::Zero(params_.dim), 0};
  views_.assign(params_.n_devices, global_.w);
  if (mode_ == Mode::BlockFL) {
    auto genesis = std::make_shared<const Block>(make_genesis(params_.lambda));
    ledgers_.assign(params_.n_miners, Ledger(genesis));
  }
}

std::vector<LocalUpdate> Simulator::local_updates(std::uint64_t epoch) {
  const int n = params_.n_devices;

  // Gradient exchange: every device evaluates its gradient sum at the global
  // model it currently holds.
  std::vector<LocalUpdate> shares(n);
  for (int i = 0; i < n; ++i) {
    shares[i].device_id = data_.devices[i].device_id;
    shares[i].grad_sum = gradient_sum(views_[i], data_.devices[i]);
    shares[i].n_samples = data_.devices[i].size();
  }
  const Vector global_grad = global_gradient(shares);

  std::vector<LocalUpdate> updates;
  updates.reserve(n);
  for (int i = 0; i < n; ++i) {
    const GlobalModel start{views_[i], global_.epoch};
    LocalUpdate u = local_epoch(data_.devices[i], start, global_grad, params_.beta,
                                derive_seed(training_seed_, epoch, i + 1), params_);
    if (i < params_.forged_devices) {
      u.n_samples = static_cast<std::uint64_t>(
          std::llround(static_cast<double>(u.n_samples) * params_.forgery_factor));
    }
    updates.push_back(std::move(u));
  }
  return updates;
}

Associations Simulator::draw_associations(std::span<const int> active) {
  const int n = params_.n_devices;
  Associations a;
  a.miner_of.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    const int device = i + 1;
    if (params_.sticky_association && sticky_ &&
        std::find(active.begin(), active.end(), sticky_->miner_of[i]) != active.end()) {
      a.miner_of[i] = sticky_->miner_of[i];
      continue;
    }
    std::vector<int> choices(active.begin(), active.end());
    if (params_.colocated_miners && choices.size() > 1)
      std::erase(choices, device);
    std::uniform_int_distribution<std::size_t> pick(0, choices.size() - 1);
    a.miner_of[i] = choices[pick(protocol_rng_)];
  }
  if (params_.sticky_association) sticky_ = a;
  return a;
}

EpochTrace Simulator::run_epoch() {
  switch (mode_) {
    case Mode::BlockFL: return blockfl_epoch();
    case Mode::Vanilla: return vanilla_epoch(local_updates(global_.epoch + 1));
    case Mode::Standalone: return standalone_epoch();
  }
  return {};
}

EpochTrace Simulator::blockfl_epoch() {
  const SystemParams& p = params_;
  EpochTrace tr;
  tr.epoch = global_.epoch + 1;

  // Miners below the battery threshold sit the epoch out.
  tr.active_miners = apply_energy_threshold(p.n_miners, protocol_rng_, p);
  if (tr.active_miners.empty()) throw NoActiveMiners();

  // Step 1: local model updates.
  std::vector<LocalUpdate> updates = local_updates(tr.epoch);

  const double t_local = local_delay(static_cast<double>(data_.devices[observed_ - 1].size()), p);
  const double t_up = uplink_delay(p);
  const double t_link = link_propagation_delay(p);
  const double t_exchange = p.update_bits / shannon_rate(p.bandwidth_miner_hz, p.snr_miner);
  const int n_active = static_cast<int>(tr.active_miners.size());

  // Steps 2-5, repeated from Step 1 whenever the block forks.
  std::vector<double> draws(n_active);
  double sum_cross = 0.0, sum_bg = 0.0, sum_bp = 0.0, elapsed_before = 0.0;
  double last_cross = 0.0, last_bg = 0.0, last_bp = 0.0;
  int attempts = 0;
  int winner_idx = 0;
  for (;;) {
    ++attempts;
    tr.associations = draw_associations(tr.active_miners);

    std::vector<int> load(p.n_miners + 1, 0);
    for (int m : tr.associations.miner_of) ++load[m];
    const int own_miner = tr.associations.miner_of[observed_ - 1];
    std::vector<int> other_loads;
    for (int m : tr.active_miners)
      if (m != own_miner) other_loads.push_back(load[m]);
    last_cross = cross_verification_delay(t_local, t_up, p, other_loads);

    for (double& d : draws) d = sample_mining_time(protocol_rng_, p.lambda);
    winner_idx = static_cast<int>(std::min_element(draws.begin(), draws.end()) - draws.begin());
    const double t_win = draws[winner_idx];
    bool fork = false;
    for (int j = 0; j < n_active; ++j)
      if (j != winner_idx && draws[j] - t_win <= t_link) fork = true;

    last_bg = t_win;
    last_bp = block_propagation_delay(n_active, p);
    sum_cross += last_cross;
    sum_bg += last_bg;
    sum_bp += last_bp;
    if (!fork) break;
    elapsed_before += t_local + t_up + last_cross + last_bg + last_bp;
    if (attempts >= p.max_fork_attempts)
      throw std::runtime_error("fork attempt cap exceeded at lambda=" + std::to_string(p.lambda));
  }
  tr.fork_attempts = attempts;
  tr.winner = tr.active_miners[winner_idx];

  // The winner's candidate block: its own devices' updates arrive after the
  // upload; relayed updates from other miners arrive over one serialized
  // miner link.
  std::vector<TimedUpdate> incoming;
  incoming.reserve(updates.size());
  std::vector<std::pair<double, std::size_t>> relayed;
  double latest_upload = 0.0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const double ready = local_delay(static_cast<double>(data_.devices[i].size()), p) + t_up;
    latest_upload = std::max(latest_upload, ready);
    if (tr.associations.miner_of[i] == tr.winner)
      incoming.push_back({updates[i], ready});
    else
      relayed.emplace_back(ready, i);
  }
  std::sort(relayed.begin(), relayed.end());
  double cursor = 0.0;
  for (const auto& [ready, i] : relayed) {
    cursor = std::max(cursor, ready) + t_exchange;
    incoming.push_back({updates[i], cursor});
  }
  const double deadline =
      std::max(p.t_wait_s, latest_upload + t_exchange * static_cast<double>(relayed.size()));
  Candidate cand = fill_candidate(tr.winner, incoming, p, deadline);
  tr.rejected_devices = cand.rejected;
  tr.rejected_devices.insert(tr.rejected_devices.end(), cand.late.begin(), cand.late.end());
  std::sort(tr.rejected_devices.begin(), tr.rejected_devices.end());

  Block block = std::move(cand.block);
  const Ledger& reference = ledgers_.front();
  block.header.prev_digest = reference.tip_digest();
  block.header.height = reference.tip().header.height + 1;
  block.header.lambda = p.lambda;
  block.header.pow_token = protocol_rng_();
  block.miner_id = tr.winner;
  block.epoch = tr.epoch;
  auto accepted = std::make_shared<const Block>(std::move(block));
  for (Ledger& l : ledgers_)
    if (l.append(accepted) != Ledger::AppendStatus::Appended)
      throw std::logic_error("ledger rejected the accepted block");
  rewards_.accrue(*accepted, tr.associations, ledgers_[tr.winner - 1]);
  tr.block = accepted;

  // Steps 6-7: download and local aggregation.
  GlobalModel next = accepted->body.empty()
                         ? GlobalModel{global_.w, global_.epoch + 1}
                         : aggregate_global(global_, accepted->body);
  if (p.malfunction_enabled)
    views_ = inject_malfunction(next.w, tr.associations, tr.active_miners, protocol_rng_, p,
                                &tr.malfunction_events);
  else
    views_.assign(p.n_devices, next.w);
  global_ = std::move(next);
  tr.global_w_after = global_.w;

  LatencyBreakdown& b = tr.breakdown;
  b.t_local = t_local;
  b.t_up = t_up;
  b.t_cross = sum_cross / attempts;
  b.t_bg = sum_bg / attempts;
  b.t_bp = sum_bp / attempts;
  b.t_dn = downlink_delay(p);
  b.t_global = global_delay(p);
  b.n_fork = attempts;
  b.total = epoch_latency_realized(b, attempts);

  double t = elapsed_before;
  const double steps[7] = {t_local, t_up, last_cross, last_bg, last_bp, b.t_dn, b.t_global};
  for (int s = 0; s < 7; ++s) tr.step_times[s] = (t += steps[s]);
  return tr;
}

EpochTrace Simulator::vanilla_epoch(std::vector<LocalUpdate> updates) {
  const SystemParams& p = params_;
  EpochTrace tr;
  tr.epoch = global_.epoch + 1;
  tr.associations.miner_of.assign(p.n_devices, 0);

  GlobalModel next = aggregate_global(global_, updates);
  if (p.malfunction_enabled) {
    // The server's own state is distorted, so every device inherits it.
    const int server[] = {0};
    auto views = inject_malfunction(next.w, tr.associations, server, protocol_rng_, p,
                                    &tr.malfunction_events);
    next.w = views.front();
  }
  global_ = std::move(next);
  views_.assign(p.n_devices, global_.w);
  tr.global_w_after = global_.w;

  LatencyBreakdown& b = tr.breakdown;
  b.t_local = local_delay(static_cast<double>(data_.devices[observed_ - 1].size()), p);
  b.t_up = uplink_delay(p);
  b.t_cross = cross_verification_delay(b.t_local, b.t_up, p, {});
  b.t_dn = downlink_delay(p);
  b.t_global = global_delay(p);
  b.total = epoch_latency_realized(b, 1);

  double t = 0.0;
  const double steps[7] = {b.t_local, b.t_up, b.t_cross, 0.0, 0.0, b.t_dn, b.t_global};
  for (int s = 0; s < 7; ++s) tr.step_times[s] = (t += steps[s]);
  return tr;
}

EpochTrace Simulator::standalone_epoch() {
  const SystemParams& p = params_;
  EpochTrace tr;
  tr.epoch = global_.epoch + 1;
  tr.associations.miner_of.assign(p.n_devices, 0);

  // Each device runs the same local iteration against its own full gradient.
  for (int i = 0; i < p.n_devices; ++i) {
    const DeviceDataset& d = data_.devices[i];
    const GlobalModel own{views_[i], global_.epoch};
    const Vector own_grad = gradient_sum(views_[i], d) / static_cast<double>(d.size());
    views_[i] = local_epoch(d, own, own_grad, p.beta, derive_seed(training_seed_, tr.epoch, i + 1),
                            p)
                    .w;
  }
  global_ = GlobalModel{views_[observed_ - 1], global_.epoch + 1};
  tr.global_w_after = global_.w;

  LatencyBreakdown& b = tr.breakdown;
  b.t_local = local_delay(static_cast<double>(data_.devices[observed_ - 1].size()), p);
  b.total = epoch_latency_realized(b, 1);
  double t = 0.0;
  for (int s = 0; s < 7; ++s) tr.step_times[s] = (t += (s == 0 ? b.t_local : 0.0));
  return tr;
}

RunResult Simulator::run() {
  constexpr int kMaxConsecutiveAborts = 100'000;
  RunResult r;
  r.mode = mode_;
  r.observed_device = observed_;
  for (const auto& d : data_.devices) r.sample_counts.push_back(static_cast<int>(d.size()));

  int aborts = 0;
  while (static_cast<int>(r.epochs.size()) < params_.max_epochs) {
    const GlobalModel before = global_;
    EpochTrace tr;
    try {
      tr = run_epoch();
    } catch (const NoActiveMiners&) {
      if (++aborts > kMaxConsecutiveAborts) throw;
      continue;
    }
    tr.aborted_attempts = aborts;
    aborts = 0;
    r.completion_latency += tr.breakdown.total;
    const bool done = converged(before, global_, params_.epsilon);
    r.epochs.push_back(std::move(tr));
    if (done) {
      r.converged_at = global_.epoch;
      break;
    }
  }
  r.final_model = global_;
  r.test = test_accuracy(global_, data_.test_set, params_.accuracy_threshold);
  r.rewards = rewards_;
  return r;
}

RunResult run_training(const SystemParams& params, std::uint64_t seed, Mode mode) {
  SystemParams p = params;
  if (mode == Mode::Vanilla) p.n_miners = 1;
  return Simulator(p, seed, mode).run();
}

OvertakeEstimate simulate_overtake(int z, int n_honest, double lambda,
                                   std::int64_t replications, Rng& rng) {
  if (z < 0 || n_honest < 1 || !(lambda > 0.0) || replications < 1)
    throw std::invalid_argument("simulate_overtake: z >= 0, n_honest >= 1, lambda > 0 required");
  std::exponential_distribution<double> attacker(lambda);
  std::exponential_distribution<double> honest(lambda * n_honest);
  OvertakeEstimate est;
  est.replications = replications;
  std::int64_t wins = 0;
  for (std::int64_t r = 0; r < replications; ++r) {
    int deficit = z;
    for (;;) {
      if (attacker(rng) < honest(rng)) {
        if (--deficit < 0) {
          ++wins;
          break;
        }
      } else if (++deficit >= kOvertakeDeficitCap) {
        ++est.truncated;
        break;
      }
    }
  }
  const double n = static_cast<double>(replications);
  est.probability = static_cast<double>(wins) / n;
  est.standard_error = std::sqrt(est.probability * (1.0 - est.probability) / n);
  return est;
}

}  // namespace blockfl
