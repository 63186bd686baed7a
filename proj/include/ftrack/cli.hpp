#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace ftrack {

// Process exit codes of the ftrack tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,             // training diverged or any other runtime error
  kExitInput = 2,               // unreadable, malformed or empty corpus / input file
  kExitCheckpointMismatch = 3,  // checkpoint trained with other dictionaries
  kExitConfig = 4,              // invalid configuration or command line
};

std::string_view git_revision();

// Runs the command line `args` (without the program name). Reports go to
// `out`, diagnostics to `err` and the log (stderr, level from FTRACK_LOG or --log-level).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ftrack
