// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace gridcast::cli {

enum ExitCode : int { kOk = 0, kBadConfig = 1, kMissingInput = 2, kRuntimeFailure = 3 };

const std::vector<std::string>& command_names();

/// Runs one command. Configuration problems throw ConfigError, absent input
/// files MissingInput; anything else propagates.
void run_command(const std::string& name, const Config& cfg);

/// run_command with exceptions mapped to exit codes and reported on stderr.
int run_command_checked(const std::string& name, const Config& cfg);

/// *.gcep files of a directory in name order.
std::vector<std::string> episode_files(const std::string& dir);

}  // namespace gridcast::cli
