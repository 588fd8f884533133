#pragma once

#include <string>
#include <vector>

namespace prefopt {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitVerification = 2,
  kExitIo = 3,
};

// Subcommands: datagen, train, eval, verify, export. `args` excludes argv[0].
int run(const std::vector<std::string>& args);

}  // namespace prefopt
