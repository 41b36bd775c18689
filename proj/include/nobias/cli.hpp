#pragma once

#include <string>
#include <vector>

namespace nobias::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIoFormat = 3,
  kInvalidRun = 4,
};

// Runs the `nobias` command line; args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace nobias::cli
