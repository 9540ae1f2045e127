#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hrank {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one `hrank` subcommand. `args` excludes the program name.
/// Returns 0 on success, 1 on runtime errors, 2 on usage or config errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hrank
