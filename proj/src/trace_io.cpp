#include "blockfl/trace_io.hpp"

#include <ostream>

#include <json.hpp>

namespace blockfl {

namespace {

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

std::string trace_to_json(const EpochTrace& t) {
  nlohmann::ordered_json j;
  j["epoch"] = t.epoch;
  j["winner"] = t.winner;
  j["fork_attempts"] = t.fork_attempts;
  j["aborted_attempts"] = t.aborted_attempts;
  j["active_miners"] = t.active_miners;
  j["miner_of"] = t.associations.miner_of;
  j["rejected_devices"] = t.rejected_devices;
  const auto& b = t.breakdown;
  j["latency_s"] = {{"local", b.t_local}, {"up", b.t_up},   {"cross", b.t_cross},
                    {"bg", b.t_bg},       {"bp", b.t_bp},   {"dn", b.t_dn},
                    {"global", b.t_global}, {"n_fork", b.n_fork}, {"total", b.total}};
  j["step_times_s"] = t.step_times;
  j["block_digest"] = t.block ? digest_hex(digest(*t.block)) : "";
  nlohmann::ordered_json events = nlohmann::ordered_json::array();
  for (const auto& e : t.malfunction_events)
    events.push_back({{"miner", e.miner_id}, {"devices", e.devices}});
  j["malfunctions"] = events;
  j["global_w"] = to_vec(t.global_w_after);
  return j.dump();
}

void write_trace(const RunResult& run, std::ostream& out) {
  for (const auto& e : run.epochs) out << trace_to_json(e) << '\n';
}

}  // namespace blockfl
