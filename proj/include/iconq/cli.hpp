#pragma once

namespace iconq {

// Entry point behind the qsched binary. Parses argv, runs one subcommand,
// and returns the process exit code; failures print "error: <reason>" to
// stderr and return 1.
int run_cli(int argc, const char* const* argv);

}  // namespace iconq
