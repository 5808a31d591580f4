#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ctmr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Parses `args` (without the program name), runs the selected subcommand
/// and returns the process exit code. Normal output goes to `out`,
/// diagnostics and usage synopses to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctmr::cli
