#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace viva::cli {

// Entry point; returns the process exit code (0 ok, 1 validation, 2 runtime).
int run(const std::vector<std::string>& args);

// Expands a JSON config into flags placed before the command-line flags. Keys
// the command line already sets are dropped, so explicit flags always win.
std::vector<std::string> merge_config_args(const nlohmann::json& config, const std::vector<std::string>& cli_args);

// <base>/<run_name> when given, otherwise <base>/<command>-<UTC timestamp>
// (with a numeric suffix if that already exists). Created on return.
std::filesystem::path make_run_dir(const std::filesystem::path& base, const std::string& command,
                                   const std::optional<std::string>& run_name);

}  // namespace viva::cli
