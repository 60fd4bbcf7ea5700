#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bem {

// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,  // anything not covered below
    kExitConfig = 2,
    kExitDivergence = 3,
    kExitCheckpoint = 4,
    kExitIo = 5,
};

// Entry point of the `bem` tool. Subcommands: synth, train, infer, eval,
// bench. Messages go to `out` and `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace bem
