#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tpi {

/// Process exit codes of the command-line driver.
enum ExitCode : int {
  kExitPass = 0,
  kExitAcceptanceFailure = 1,
  kExitUsage = 2,
  kExitResource = 3,
};

/// Entry point behind the `tpi` executable.  `args` excludes the program
/// name.  Tables and reports go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tpi
