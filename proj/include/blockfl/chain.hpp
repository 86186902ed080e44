#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blockfl/fl_core.hpp"
#include "blockfl/params.hpp"

namespace blockfl {

using Digest = std::uint64_t;

struct BlockHeader {
  Digest prev_digest = 0;
  double lambda = 0.0;
  std::uint64_t pow_token = 0;
  std::uint64_t height = 0;
};

struct Block {
  BlockHeader header;
  std::vector<LocalUpdate> body;  // sorted by device_id
  int miner_id = 0;
  std::uint64_t epoch = 0;
};

using BlockPtr = std::shared_ptr<const Block>;

// Canonical little-endian serialization. Every field is written as a u32
// byte length followed by the field bytes, in this order:
//   height u64, prev_digest u64, lambda f64, pow_token u64, miner_id i32,
//   epoch u64, update_count u32, then per update:
//   device_id i32, epoch u64, n_samples u64, t_local f64, dim u32,
//   w f64[dim], grad_sum f64[dim]
std::vector<std::uint8_t> serialize(const Block& block);

// 64-bit FNV-1a over serialize(block).
Digest digest(const Block& block);

std::string digest_hex(Digest d);

// h + delta_m * (number of updates)
double block_size_bits(const Block& block, const SystemParams& p);

Block make_genesis(double lambda);

// Per-miner append-only chain.
class Ledger {
 public:
  enum class AppendStatus { Appended, StaleParent, BadHeight };

  explicit Ledger(BlockPtr genesis);

  AppendStatus append(BlockPtr block);

  [[nodiscard]] const Block& tip() const { return *blocks_.back(); }
  [[nodiscard]] Digest tip_digest() const { return digests_.back(); }
  [[nodiscard]] std::size_t size() const { return blocks_.size(); }
  [[nodiscard]] const std::vector<BlockPtr>& blocks() const { return blocks_; }
  [[nodiscard]] bool contains(Digest d) const;

  // Full walk: recomputes every digest and checks each link and height.
  [[nodiscard]] bool verify_chain() const;

 private:
  std::vector<BlockPtr> blocks_;
  std::vector<Digest> digests_;
};

// |t_local - delta_d n / f_c| <= tolerance * (delta_d n / f_c), vectors finite.
bool verify_update(const LocalUpdate& update, const SystemParams& p, double tolerance);

struct TimedUpdate {
  LocalUpdate update;
  double arrival = 0.0;  // seconds since epoch start
};

struct Candidate {
  Block block;
  std::vector<int> rejected;  // failed verification
  std::vector<int> late;      // arrived after the block closed
  double closed_at = 0.0;
};

// Collects verified updates in arrival order until the block holds N_D
// updates or `deadline` passes. One update per device; later duplicates are
// dropped as rejected.
Candidate fill_candidate(int miner_id, std::span<const TimedUpdate> incoming,
                         const SystemParams& p, double deadline);

// device index (device_id - 1) -> associated miner id
struct Associations {
  std::vector<int> miner_of;

  [[nodiscard]] std::vector<int> devices_of(int miner_id) const;
};

class RewardLedger {
 public:
  explicit RewardLedger(double reward_rate = 1.0) : reward_rate_(reward_rate) {}

  // Credits the block's devices (rate * N_i) and its miner (rate * sum of N_i
  // over the miner's associated devices present in the block). Returns false
  // and changes nothing when the block is not on `canonical`.
  bool accrue(const Block& block, const Associations& associations, const Ledger& canonical);

  [[nodiscard]] double data_reward(int device_id) const;
  [[nodiscard]] double mining_reward(int miner_id) const;
  [[nodiscard]] double total_data_rewards() const;
  [[nodiscard]] double total_mining_rewards() const;
  [[nodiscard]] double reward_rate() const { return reward_rate_; }
  [[nodiscard]] const std::map<int, double>& data_rewards() const { return data_; }
  [[nodiscard]] const std::map<int, double>& mining_rewards() const { return mining_; }

 private:
  double reward_rate_;
  std::map<int, double> data_;
  std::map<int, double> mining_;
};

}  // namespace blockfl
