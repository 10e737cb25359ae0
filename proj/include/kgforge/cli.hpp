#pragma once

#include <string>
#include <vector>

namespace kgforge::cli {

// Dispatches one subcommand. Exit status: 0 success, 1 validation/usage
// error, 2 runtime error.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace kgforge::cli
