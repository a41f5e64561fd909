#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mcnn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kDiverged = 3 };

/// Runs the `mcnn` tool on `args` (without the program name). Normal output
/// goes to `out`, progress and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mcnn::cli
