#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "blockfl/params.hpp"
#include "blockfl/simulator.hpp"

namespace blockfl {

enum class SweepAxis { None, Lambda, NDevices, NMiners, Snr, ThetaE, OvertakeZ };
enum class OutputFormat { Csv, JsonLines };

std::string to_string(SweepAxis axis);
std::optional<SweepAxis> parse_axis(const std::string& text);
std::string to_string(OutputFormat format);
std::optional<OutputFormat> parse_format(const std::string& text);

struct ExperimentConfig {
  SystemParams base;
  SweepAxis axis = SweepAxis::None;
  std::vector<double> values;
  int replications = 1;
  std::uint64_t master_seed = 1;
  std::string output_dir = "results";
  OutputFormat format = OutputFormat::Csv;
  Mode mode = Mode::BlockFL;
  bool vanilla_baseline = false;
  bool standalone_baseline = false;
  std::int64_t overtake_replications = 100'000;
  int threads = 0;  // 0 = hardware concurrency
};

// Carries every validation problem found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  [[nodiscard]] const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

// Flat `key = value` text, `#` starts a comment. Units are part of the key
// names; SNRs are given in dB and stored linear. Unknown keys are errors.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Default sweep grid for an axis.
std::vector<double> default_grid(SweepAxis axis);

// Documented key list, used by the README and `validate-config --keys`.
const std::vector<std::pair<std::string, std::string>>& config_keys();

}  // namespace blockfl
