#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace twostage {

// Exit statuses of the command-line front end.
enum ExitCode : int {
  kExitSuccess = 0,
  kExitInputError = 2,
  kExitMissingPrerequisite = 3,
  kExitNumericError = 4,
};

// Runs one command line (args[0] is the program name). Results go to `out`,
// diagnostics to `err`; nothing is written to the process streams.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace twostage
