#include "blockfl/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace blockfl {

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::None: return "none";
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::NDevices: return "n_devices";
    case SweepAxis::NMiners: return "n_miners";
    case SweepAxis::Snr: return "snr";
    case SweepAxis::ThetaE: return "theta_e";
    case SweepAxis::OvertakeZ: return "overtake_z";
  }
  return "none";
}

std::optional<SweepAxis> parse_axis(const std::string& text) {
  for (SweepAxis a : {SweepAxis::None, SweepAxis::Lambda, SweepAxis::NDevices, SweepAxis::NMiners,
                      SweepAxis::Snr, SweepAxis::ThetaE, SweepAxis::OvertakeZ})
    if (to_string(a) == text) return a;
  return std::nullopt;
}

std::string to_string(OutputFormat format) {
  return format == OutputFormat::Csv ? "csv" : "jsonl";
}

std::optional<OutputFormat> parse_format(const std::string& text) {
  if (text == "csv") return OutputFormat::Csv;
  if (text == "jsonl") return OutputFormat::JsonLines;
  return std::nullopt;
}

namespace {

std::string join(const std::vector<std::string>& errors) {
  std::string out;
  for (const auto& e : errors) out += (out.empty() ? "" : "; ") + e;
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<double> to_double(const std::string& s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

template <typename Int>
std::optional<Int> to_int(const std::string& s) {
  Int v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::optional<bool> to_bool(const std::string& s) {
  if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
  if (s == "off" || s == "false" || s == "0" || s == "no") return false;
  return std::nullopt;
}

struct KeySpec {
  std::string description;
  bool required = false;
  // Applies the raw value; returns an error message or empty.
  std::function<std::string(ExperimentConfig&, const std::string&)> apply;
};

template <typename Setter>
KeySpec real(std::string desc, bool required, Setter set) {
  return {std::move(desc), required, [set](ExperimentConfig& c, const std::string& v) -> std::string {
            auto d = to_double(v);
            if (!d) return "expected a number, got '" + v + "'";
            set(c, *d);
            return {};
          }};
}

template <typename Int, typename Setter>
KeySpec integer(std::string desc, bool required, Setter set) {
  return {std::move(desc), required, [set](ExperimentConfig& c, const std::string& v) -> std::string {
            auto d = to_int<Int>(v);
            if (!d) return "expected an integer, got '" + v + "'";
            set(c, *d);
            return {};
          }};
}

template <typename Setter>
KeySpec flag(std::string desc, Setter set) {
  return {std::move(desc), false, [set](ExperimentConfig& c, const std::string& v) -> std::string {
            auto b = to_bool(v);
            if (!b) return "expected on/off, got '" + v + "'";
            set(c, *b);
            return {};
          }};
}

const std::map<std::string, KeySpec>& key_table() {
  static const std::map<std::string, KeySpec> table = [] {
    std::map<std::string, KeySpec> t;
    t["n_devices"] = integer<int>("number of devices N_D", true,
                                  [](auto& c, int v) { c.base.n_devices = v; });
    t["n_miners"] = integer<int>("number of miners N_M", true,
                                 [](auto& c, int v) { c.base.n_miners = v; });
    t["sample_size_kbit"] = real("data sample size delta_d, kbit", true,
                                 [](auto& c, double v) { c.base.sample_bits = v * 1e3; });
    t["update_size_kbit"] = real("model update size delta_m, kbit", true,
                                 [](auto& c, double v) { c.base.update_bits = v * 1e3; });
    t["header_size_kbit"] = real("block header size h, kbit", true,
                                 [](auto& c, double v) { c.base.header_bits = v * 1e3; });
    t["clock_ghz"] = real("device clock f_c, GHz", true,
                          [](auto& c, double v) { c.base.clock_hz = v * 1e9; });
    t["bandwidth_up_khz"] = real("uplink bandwidth per device, kHz", true,
                                 [](auto& c, double v) { c.base.bandwidth_up_hz = v * 1e3; });
    t["bandwidth_dn_khz"] = real("downlink bandwidth per device, kHz", true,
                                 [](auto& c, double v) { c.base.bandwidth_dn_hz = v * 1e3; });
    t["bandwidth_miner_khz"] = real("bandwidth per miner link, kHz", true,
                                    [](auto& c, double v) { c.base.bandwidth_miner_hz = v * 1e3; });
    t["snr_up_db"] = real("uplink SNR, dB", true,
                          [](auto& c, double v) { c.base.snr_up = db_to_linear(v); });
    t["snr_dn_db"] = real("downlink SNR, dB", true,
                          [](auto& c, double v) { c.base.snr_dn = db_to_linear(v); });
    t["snr_miner_db"] = real("miner-to-miner SNR, dB", true,
                             [](auto& c, double v) { c.base.snr_miner = db_to_linear(v); });
    t["t_wait_ms"] = real("candidate block waiting time T_wait, ms", true,
                          [](auto& c, double v) { c.base.t_wait_s = v * 1e-3; });
    t["t_ack_wait_ms"] = real("block ACK waiting time T_a,wait, ms", true,
                              [](auto& c, double v) { c.base.t_ack_wait_s = v * 1e-3; });
    t["lambda_per_s"] = real("block generation rate lambda, 1/s", true,
                             [](auto& c, double v) { c.base.lambda = v; });
    t["beta"] = real("local step size", false, [](auto& c, double v) { c.base.beta = v; });
    t["epsilon"] = real("convergence threshold on ||w_L - w_{L-1}||_2", false,
                        [](auto& c, double v) { c.base.epsilon = v; });
    t["theta_e"] = real("normalized battery threshold in [0, 1]", false,
                        [](auto& c, double v) { c.base.energy_threshold = v; });
    t["malfunction"] = flag("miner malfunction on/off",
                            [](auto& c, bool v) { c.base.malfunction_enabled = v; });
    t["malfunction_prob"] = real("per-miner per-epoch malfunction probability", false,
                                 [](auto& c, double v) { c.base.malfunction_prob = v; });
    t["malfunction_mean"] = real("malfunction noise mean", false,
                                 [](auto& c, double v) { c.base.malfunction_mean = v; });
    t["malfunction_var"] = real("malfunction noise variance", false,
                                [](auto& c, double v) { c.base.malfunction_var = v; });
    t["dim"] = integer<int>("feature dimension d", false, [](auto& c, int v) { c.base.dim = v; });
    t["noise_std"] = real("label noise standard deviation", false,
                          [](auto& c, double v) { c.base.noise_std = v; });
    t["samples_min"] = integer<int>("minimum samples per device", false,
                                    [](auto& c, int v) { c.base.samples_min = v; });
    t["samples_max"] = integer<int>("maximum samples per device", false,
                                    [](auto& c, int v) { c.base.samples_max = v; });
    t["test_samples"] = integer<int>("held-out test set size", false,
                                     [](auto& c, int v) { c.base.test_samples = v; });
    t["accuracy_threshold"] = real("absolute residual counted as correct", false,
                                   [](auto& c, double v) { c.base.accuracy_threshold = v; });
    t["max_epochs"] = integer<int>("epoch cap L_max", false,
                                   [](auto& c, int v) { c.base.max_epochs = v; });
    t["verify_tolerance"] = real("relative tolerance of the sample-count check", false,
                                 [](auto& c, double v) { c.base.verify_tolerance = v; });
    t["reward_rate"] = real("reward units per data sample", false,
                            [](auto& c, double v) { c.base.reward_rate = v; });
    t["forged_devices"] = integer<int>("devices inflating their sample count", false,
                                       [](auto& c, int v) { c.base.forged_devices = v; });
    t["forgery_factor"] = real("sample-count inflation factor of forged devices", false,
                               [](auto& c, double v) { c.base.forgery_factor = v; });
    t["colocated_miners"] = flag("miners are the devices (device i never picks miner i)",
                                 [](auto& c, bool v) { c.base.colocated_miners = v; });
    t["sticky_association"] = flag("keep the first device-to-miner map across epochs",
                                   [](auto& c, bool v) { c.base.sticky_association = v; });
    t["max_fork_attempts"] = integer<std::int64_t>(
        "fork attempts per epoch before the run fails", false,
        [](auto& c, std::int64_t v) { c.base.max_fork_attempts = v; });
    t["propagation_reading"] = {
        "T_bp in the closed-form optimal rate: max | link | total", false,
        [](ExperimentConfig& c, const std::string& v) -> std::string {
          if (v == "max") c.base.propagation_reading = PropagationReading::MaxDelay;
          else if (v == "link") c.base.propagation_reading = PropagationReading::SingleLink;
          else if (v == "total") c.base.propagation_reading = PropagationReading::Total;
          else return "expected max, link or total, got '" + v + "'";
          return {};
        }};
    t["sweep_axis"] = {"lambda | n_devices | n_miners | snr | theta_e | overtake_z | none", false,
                       [](ExperimentConfig& c, const std::string& v) -> std::string {
                         auto a = parse_axis(v);
                         if (!a) return "unknown sweep axis '" + v + "'";
                         c.axis = *a;
                         return {};
                       }};
    t["sweep_values"] = {"comma-separated sweep values (empty = default grid)", false,
                         [](ExperimentConfig& c, const std::string& v) -> std::string {
                           c.values.clear();
                           std::stringstream ss(v);
                           std::string item;
                           while (std::getline(ss, item, ',')) {
                             auto d = to_double(trim(item));
                             if (!d) return "bad sweep value '" + trim(item) + "'";
                             c.values.push_back(*d);
                           }
                           return {};
                         }};
    t["replications"] = integer<int>("replications per sweep point", false,
                                     [](auto& c, int v) { c.replications = v; });
    t["master_seed"] = integer<std::uint64_t>("master RNG seed", false,
                                              [](auto& c, std::uint64_t v) { c.master_seed = v; });
    t["output_dir"] = {"directory for result files", false,
                       [](ExperimentConfig& c, const std::string& v) -> std::string {
                         c.output_dir = v;
                         return {};
                       }};
    t["format"] = {"csv | jsonl", false, [](ExperimentConfig& c, const std::string& v) -> std::string {
                     auto f = parse_format(v);
                     if (!f) return "unknown format '" + v + "'";
                     c.format = *f;
                     return {};
                   }};
    t["mode"] = {"blockfl | vanilla | standalone", false,
                 [](ExperimentConfig& c, const std::string& v) -> std::string {
                   auto m = parse_mode(v);
                   if (!m) return "unknown mode '" + v + "'";
                   c.mode = *m;
                   return {};
                 }};
    t["vanilla_baseline"] = flag("also run the vanilla baseline at every point",
                                 [](auto& c, bool v) { c.vanilla_baseline = v; });
    t["standalone_baseline"] = flag("also run the standalone baseline at every point",
                                    [](auto& c, bool v) { c.standalone_baseline = v; });
    t["overtake_replications"] = integer<std::int64_t>(
        "Monte Carlo replications per overtake point", false,
        [](auto& c, std::int64_t v) { c.overtake_replications = v; });
    t["threads"] = integer<int>("worker threads (0 = all cores)", false,
                                [](auto& c, int v) { c.threads = v; });
    return t;
  }();
  return table;
}

void validate_sweep(const ExperimentConfig& c, std::vector<std::string>& errors) {
  if (c.replications < 1) errors.push_back("replications must be >= 1");
  if (c.overtake_replications < 1) errors.push_back("overtake_replications must be >= 1");
  if (c.threads < 0) errors.push_back("threads must be >= 0");
  for (double v : c.values) {
    const bool integral = std::floor(v) == v;
    const std::string at = " (sweep value " + std::to_string(v) + ")";
    switch (c.axis) {
      case SweepAxis::Lambda:
        if (!(v > 0.0)) errors.push_back("lambda sweep values must be > 0" + at);
        break;
      case SweepAxis::NDevices:
      case SweepAxis::NMiners:
        if (!integral || v < 1.0)
          errors.push_back(to_string(c.axis) + " sweep values must be integers >= 1" + at);
        break;
      case SweepAxis::ThetaE:
        if (v < 0.0 || v > 1.0) errors.push_back("theta_e sweep values must lie in [0, 1]" + at);
        break;
      case SweepAxis::OvertakeZ:
        if (!integral || v < 0.0) errors.push_back("overtake_z values must be integers >= 0" + at);
        break;
      case SweepAxis::Snr:
      case SweepAxis::None: break;
    }
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error("invalid config: " + join(errors)), errors_(std::move(errors)) {}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  std::set<std::string> seen;
  const auto& table = key_table();

  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    const std::string where = " (line " + std::to_string(line_no) + ")";
    if (eq == std::string::npos) {
      errors.push_back("expected key = value" + where);
      continue;
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string value = trim(std::string_view(stripped).substr(eq + 1));
    auto it = table.find(key);
    if (it == table.end()) {
      errors.push_back("unknown key '" + key + "'" + where);
      continue;
    }
    if (!seen.insert(key).second) {
      errors.push_back("duplicate key '" + key + "'" + where);
      continue;
    }
    if (std::string err = it->second.apply(cfg, value); !err.empty())
      errors.push_back(key + ": " + err + where);
  }

  for (const auto& [key, spec] : table)
    if (spec.required && !seen.contains(key)) errors.push_back("missing required key '" + key + "'");

  // Keys that failed to parse keep their defaults, so range checks still apply.
  for (auto& e : cfg.base.validate()) errors.push_back(std::move(e));
  if (cfg.values.empty()) cfg.values = default_grid(cfg.axis);
  validate_sweep(cfg, errors);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config file '" + path.string() + "'"});
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::vector<double> default_grid(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Lambda: {
      std::vector<double> g;
      for (int i = 0; i < 20; ++i) g.push_back(0.01 * std::pow(1000.0, i / 19.0));
      return g;
    }
    case SweepAxis::NDevices: return {2, 5, 10, 20, 40};
    case SweepAxis::NMiners: return {1, 10};
    case SweepAxis::Snr: return {5, 10, 15, 20};
    case SweepAxis::ThetaE: return {0.0, 0.25, 0.5, 0.75};
    case SweepAxis::OvertakeZ: return {0, 1, 2, 3, 4, 5, 6, 7, 8};
    case SweepAxis::None: return {0.0};
  }
  return {};
}

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, spec] : key_table())
      out.emplace_back(k, spec.description + (spec.required ? " (required)" : ""));
    return out;
  }();
  return keys;
}

}  // namespace blockfl
