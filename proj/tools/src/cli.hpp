#pragma once

#include <string>
#include <vector>

namespace nrba::cli {

/// Runs the command line; returns the process exit code
/// (0 success, 2 config error, 3 data error, 4 numerical failure).
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace nrba::cli
