#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"

namespace vlfuse::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // validation diagnostics or a metric below expect_min_accuracy
  kExitConfig = 2,   // unreadable input, bad config, bad parameters
};

/// Full command line: `vlfuse <command> [options]`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// One command on an already assembled config. `files` are positional arguments
/// (stores for validate, report documents for report).
int run_command(const std::string& command, const RunConfig& config, const std::vector<std::string>& files,
                std::ostream& out, std::ostream& err);

}  // namespace vlfuse::cli
