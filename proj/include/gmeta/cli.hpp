#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gmeta {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitData = 3,
  kExitConvergence = 4,
  kExitIdentifiability = 5,
};

/// `gmeta fit | meta | simulate`. Writes results to `out`, diagnostics to
/// `err`, and returns an ExitCode.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Same as above; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gmeta
