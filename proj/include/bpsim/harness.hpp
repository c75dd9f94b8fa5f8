#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpsim/dqn.hpp"
#include "bpsim/engine.hpp"

namespace bpsim {

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitDiverged = 2 };

/// Options common to train / eval / compare after flag and config-file
/// resolution.
struct RunOptions {
  std::filesystem::path suite_path;
  std::filesystem::path out_dir;
  std::filesystem::path config_path;  // optional JSON overrides
  std::uint64_t seed = 0;
  std::optional<int> episodes;
  std::optional<int> steps;
  std::optional<double> arrival_probability;
  std::optional<double> cap;
  std::optional<std::string> encoding;
  std::string policy;
  std::filesystem::path weights;
  int runs = 1;
};

std::filesystem::path bundled_suite_path();

double median(std::vector<double> values);
double mean(const std::vector<double>& values);

/// Git blob hash (SHA-1 over "blob <size>\0" + content), lowercase hex.
std::string git_blob_hash(std::string_view content);

int cmd_train(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_compare(const RunOptions& options, std::ostream& out, std::ostream& err);

/// Parses argv (without the program name) and dispatches to a command.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bpsim
