#pragma once

#include <ostream>
#include <span>
#include <string>

namespace capslstm {

// Process exit codes, one per failure family.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // e.g. --check-params mismatch
  kExitConfig = 2,
  kExitWeights = 3,
  kExitData = 4,
  kExitNumeric = 5,
};

// Runs the command line `args` (args[0] is the program name). Never throws.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace capslstm
