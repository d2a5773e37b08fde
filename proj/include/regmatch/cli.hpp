#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace regmatch {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,  // bad flags or configuration
  kExitGradCheck = 3,
  kExitData = 4,
  kExitFormat = 5,
  kExitDomain = 6,
  kExitShape = 7,
  kExitAdapter = 8,
  kExitTraining = 9,
};

// Runs one subcommand: gen-synthetic, train, eval, ensemble, grad-check,
// inspect. argv[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace regmatch
