#pragma once

#include <exception>

namespace ssmf {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

/// Maps an in-flight exception to its exit code.
int exit_code_for(const std::exception& e);

/// Entry point of the `ssmf` tool: gen-data, train, experiment, probe, inspect.
int run_cli(int argc, char** argv);

}  // namespace ssmf
