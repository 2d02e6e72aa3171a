#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cds {

enum ExitCode : int {
  exit_ok = 0,
  exit_failure = 1,
  exit_config = 2,
  exit_backend = 3,
  exit_numerical = 4,
};

// Entry point of the `cds` tool. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cds
