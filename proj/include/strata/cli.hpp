#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace strata::cli {

/// Runs one subcommand. Exit codes: 0 success, 1 invalid configuration or runtime
/// failure, 2 unknown subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "STRATA_OUT";

const std::vector<std::string>& subcommands();

}  // namespace strata::cli
