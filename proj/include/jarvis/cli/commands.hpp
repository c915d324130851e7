#pragma once

#include "jarvis/cli/run_config.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace jarvis {

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2 };

struct GenerateArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  bool force = false;
  int threads = 1;
};

struct TrainArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::string phase = "short";
  /// Start over instead of resuming from out/last.ckpt.
  bool force = false;
  int threads = 1;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
  std::vector<std::string> strategies{"weighted"};
  /// Temporal support in seconds; empty evaluates the keyframe window only.
  std::vector<double> supports;
  std::vector<double> thresholds;
  std::optional<int> topk;
  /// k of the topk aggregation strategy.
  int topk_windows = 3;
  std::optional<std::string> variant;
  /// Uniform aggregation weights instead of the learned ones.
  bool uniform = false;
  std::string split = "eval";
  int threads = 1;
};

struct InspectArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::string clip;
  std::filesystem::path attention;
  int actor = 0;
  int threads = 1;
};

/// Each command returns an exit code; errors are reported on `err`.
int cmd_generate(const GenerateArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_inspect(const InspectArgs& args, std::ostream& out, std::ostream& err);

/// Argument parsing and dispatch for the jarvis executable.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace jarvis
