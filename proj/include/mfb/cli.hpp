#pragma once

#include <iosfwd>

namespace mfb::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kIo = 3,
  kNumerical = 4,
  kMismatch = 5,
};

int run(int argc, char** argv);
// Same, with explicit streams for tests.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace mfb::cli
