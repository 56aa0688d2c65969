#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mpq::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kRuntimeError = 1,
  kConfigError = 2,
  kDataError = 3,
  kModelError = 4,
};

/// Runs one command line (args excludes the program name). Failures print a
/// single `error[<kind>]: <reason>` line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mpq::cli
