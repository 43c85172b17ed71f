#pragma once

#include <ostream>

namespace perflaw::cli {

/// Exit codes: 0 ok, 1 usage, 2 I/O, 3 validation, 4 numeric.
enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kValidation = 3, kNumeric = 4 };

/// Runs the command line; reports go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace perflaw::cli
