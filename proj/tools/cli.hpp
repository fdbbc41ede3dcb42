#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ternclip::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

/// Runs one command. Results go to `out`; failures print a single line
/// "error kind=<kind> code=<n> message=<text>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ternclip::cli
