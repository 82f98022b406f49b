#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "hybridtrack/scenario.hpp"
#include "hybridtrack/state.hpp"
#include "hybridtrack/training.hpp"

namespace hybridtrack::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Every setting of every subcommand. Loaded from a `key = value` file, then
/// overridden by command-line flags.
struct RunConfig {
  TrackerConfig tracker;
  ScenarioSpec scenario;

  std::uint64_t seed = 0;
  int threads = 1;

  std::string checkpoint;
  std::string input;         // comma-separated list
  std::string output;
  std::string ground_truth;  // comma-separated list
  std::string detections;    // comma-separated list, parallel to KITTI label inputs
  std::string loss_trace;
  std::string manifest;
  std::string labels_output;
  std::string detections_output;

  std::string filter = "hybrid";

  int iterations = 1500;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double max_grad_norm = 200.0;
  HistorySource history = HistorySource::kPosterior;
  int max_context = 40;
  int max_tracklets = 0;
  int train_scenarios = 40;
  int log_every = 100;

  int tracklets = 100;
  int context = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  int entries_per_tensor = 2;
};

/// Subcommands a key applies to.
enum Command : unsigned {
  kTrain = 1U << 0U,
  kTrack = 1U << 1U,
  kEval = 1U << 2U,
  kSimulate = 1U << 3U,
  kGradcheck = 1U << 4U,
};

struct SchemaEntry {
  std::string key;
  std::string help;
  unsigned commands = 0;
};

/// The keys accepted in config files and as `--key` flags.
const std::vector<SchemaEntry>& schema();

/// Sets one key from its text value; throws ConfigError on an unknown key
/// or a bad value.
void set_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Current value of a key in config-file syntax.
std::string get_value(const RunConfig& cfg, std::string_view key);

/// Applies a `key = value` file ('#' starts a comment). Throws ConfigError
/// naming the line and key on any violation.
void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source);

/// Entry point of the command-line tool. Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hybridtrack::cli
