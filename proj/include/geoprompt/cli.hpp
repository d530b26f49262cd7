#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace geoprompt::cli {

/// Exit codes besides 0 (success).
inline constexpr int kExitFailure = 1;      // runtime or data error, gradcheck over tolerance
inline constexpr int kExitConfig = 2;       // invalid config, message carries a JSON pointer
inline constexpr int kExitMissingFile = 3;  // a referenced file does not exist
inline constexpr int kExitUsage = 64;       // bad command line

/// Runs one command: gen-data, pretrain, adapt, eval, gradcheck or inspect.
/// Results go to `out`; a failure writes one JSON line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace geoprompt::cli
