#pragma once

#include <iosfwd>

namespace featclust::cli {

/// Parses the command line, runs one subcommand and returns the exit code:
/// 0 success, 2 invalid input, 3 I/O failure, 4 numerical failure or a
/// surrogate that did not converge. Logs go to `log`.
int run_cli(int argc, const char* const* argv, std::ostream& log);

}  // namespace featclust::cli
