#pragma once

// Entry point of the tlm-lab command-line tool, exposed so tests can drive
// every subcommand in-process. Returns the process exit code: 0 on success,
// 1 on runtime failure, 2 on bad usage.

#include <string>
#include <vector>

namespace tlm {

int cli_main(int argc, const char* const* argv);

// Convenience overload: arguments without the program name.
int cli_main(const std::vector<std::string>& args);

}  // namespace tlm
