#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ucvm::cli {

struct CommandResult {
  int exit_code = 0;
  std::string out;
  std::string err;
};

/// Runs one `ucvm` invocation. `args` excludes the program name.
/// Exit codes: 0 success, 1 user or environment error, 2 internal error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Same, with both streams captured.
CommandResult run_captured(const std::vector<std::string>& args);

}  // namespace ucvm::cli
