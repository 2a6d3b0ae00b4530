#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace compress::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kIo = 3,
  kConstraint = 4,
};

/// Entry point behind the `compress` binary. `args[0]` is the program name.
/// Subcommands: gen-data, distill, eval, ablate.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses a flat `key = value` file into `--key=value` arguments. Blank lines
/// and lines starting with '#' are skipped.
std::vector<std::string> config_arguments(const std::string& path);

}  // namespace compress::cli
