#include "blockfl/chain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "blockfl/latency_model.hpp"

namespace blockfl {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { field(4, v); }
  void u64(std::uint64_t v) { field(8, v); }
  void i32(std::int32_t v) { field(4, static_cast<std::uint32_t>(v)); }
  void f64(double v) { field(8, std::bit_cast<std::uint64_t>(v)); }

  void f64_array(const Vector& v) {
    raw(static_cast<std::uint64_t>(v.size()) * 8, 4);
    for (Eigen::Index i = 0; i < v.size(); ++i) raw(std::bit_cast<std::uint64_t>(v[i]), 8);
  }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void field(int width, std::uint64_t v) {
    raw(static_cast<std::uint64_t>(width), 4);
    raw(v, width);
  }
  void raw(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Block& block) {
  Writer w;
  w.u64(block.header.height);
  w.u64(block.header.prev_digest);
  w.f64(block.header.lambda);
  w.u64(block.header.pow_token);
  w.i32(block.miner_id);
  w.u64(block.epoch);
  w.u32(static_cast<std::uint32_t>(block.body.size()));
  for (const LocalUpdate& u : block.body) {
    w.i32(u.device_id);
    w.u64(u.epoch);
    w.u64(u.n_samples);
    w.f64(u.t_local);
    w.u32(static_cast<std::uint32_t>(u.w.size()));
    w.f64_array(u.w);
    w.f64_array(u.grad_sum);
  }
  return w.take();
}

Digest digest(const Block& block) {
  Digest h = 14695981039346656037ULL;
  for (std::uint8_t b : serialize(block)) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string digest_hex(Digest d) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

double block_size_bits(const Block& block, const SystemParams& p) {
  return p.header_bits + p.update_bits * static_cast<double>(block.body.size());
}

Block make_genesis(double lambda) {
  Block g;
  g.header.lambda = lambda;
  return g;
}

Ledger::Ledger(BlockPtr genesis) {
  if (!genesis || genesis->header.height != 0 || genesis->header.prev_digest != 0)
    throw std::invalid_argument("Ledger: genesis needs height 0 and a zero parent digest");
  digests_.push_back(digest(*genesis));
  blocks_.push_back(std::move(genesis));
}

Ledger::AppendStatus Ledger::append(BlockPtr block) {
  if (block->header.prev_digest != digests_.back()) return AppendStatus::StaleParent;
  if (block->header.height != blocks_.back()->header.height + 1) return AppendStatus::BadHeight;
  digests_.push_back(digest(*block));
  blocks_.push_back(std::move(block));
  return AppendStatus::Appended;
}

bool Ledger::contains(Digest d) const {
  return std::find(digests_.rbegin(), digests_.rend(), d) != digests_.rend();
}

bool Ledger::verify_chain() const {
  if (blocks_.front()->header.height != 0 || blocks_.front()->header.prev_digest != 0) return false;
  Digest prev = digest(*blocks_.front());
  if (prev != digests_.front()) return false;
  for (std::size_t i = 1; i < blocks_.size(); ++i) {
    const Block& b = *blocks_[i];
    if (b.header.prev_digest != prev || b.header.height != i) return false;
    prev = digest(b);
    if (prev != digests_[i]) return false;
  }
  return true;
}

bool verify_update(const LocalUpdate& u, const SystemParams& p, double tolerance) {
  if (!(tolerance > 0.0 && tolerance < 1.0))
    throw std::invalid_argument("verify_update: tolerance must lie in (0, 1)");
  if (u.n_samples == 0 || u.w.size() == 0 || u.w.size() != u.grad_sum.size()) return false;
  if (!all_finite(u.w) || !all_finite(u.grad_sum)) return false;
  if (!std::isfinite(u.t_local) || u.t_local < 0.0) return false;
  const double expected = local_delay(static_cast<double>(u.n_samples), p);
  return std::abs(u.t_local - expected) <= tolerance * expected;
}

Candidate fill_candidate(int miner_id, std::span<const TimedUpdate> incoming,
                         const SystemParams& p, double deadline) {
  std::vector<const TimedUpdate*> order;
  order.reserve(incoming.size());
  for (const auto& t : incoming) order.push_back(&t);
  std::stable_sort(order.begin(), order.end(), [](const TimedUpdate* a, const TimedUpdate* b) {
    if (a->arrival != b->arrival) return a->arrival < b->arrival;
    return a->update.device_id < b->update.device_id;
  });

  Candidate c;
  c.block.miner_id = miner_id;
  c.closed_at = deadline;
  std::set<int> seen;
  bool full = false;
  for (const TimedUpdate* t : order) {
    const LocalUpdate& u = t->update;
    if (full || t->arrival > deadline) {
      c.late.push_back(u.device_id);
      continue;
    }
    if (seen.contains(u.device_id) || !verify_update(u, p, p.verify_tolerance)) {
      c.rejected.push_back(u.device_id);
      continue;
    }
    seen.insert(u.device_id);
    c.block.body.push_back(u);
    c.block.epoch = std::max(c.block.epoch, u.epoch);
    if (static_cast<int>(c.block.body.size()) == p.n_devices) {
      full = true;
      c.closed_at = t->arrival;
    }
  }
  std::sort(c.block.body.begin(), c.block.body.end(),
            [](const LocalUpdate& a, const LocalUpdate& b) { return a.device_id < b.device_id; });
  return c;
}

std::vector<int> Associations::devices_of(int miner_id) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < miner_of.size(); ++i)
    if (miner_of[i] == miner_id) out.push_back(static_cast<int>(i) + 1);
  return out;
}

bool RewardLedger::accrue(const Block& block, const Associations& associations,
                          const Ledger& canonical) {
  if (!canonical.contains(digest(block))) return false;
  if (block.body.empty()) return true;
  double miner_share = 0.0;
  for (const LocalUpdate& u : block.body) {
    const double amount = reward_rate_ * static_cast<double>(u.n_samples);
    data_[u.device_id] += amount;
    const auto idx = static_cast<std::size_t>(u.device_id - 1);
    if (idx < associations.miner_of.size() && associations.miner_of[idx] == block.miner_id)
      miner_share += amount;
  }
  mining_[block.miner_id] += miner_share;
  return true;
}

double RewardLedger::data_reward(int device_id) const {
  auto it = data_.find(device_id);
  return it == data_.end() ? 0.0 : it->second;
}

double RewardLedger::mining_reward(int miner_id) const {
  auto it = mining_.find(miner_id);
  return it == mining_.end() ? 0.0 : it->second;
}

double RewardLedger::total_data_rewards() const {
  double t = 0.0;
  for (const auto& [_, v] : data_) t += v;
  return t;
}

double RewardLedger::total_mining_rewards() const {
  double t = 0.0;
  for (const auto& [_, v] : mining_) t += v;
  return t;
}

}  // namespace blockfl
