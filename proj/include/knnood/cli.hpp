#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace knnood::cli {

/// Runs one command. Errors are reported on `err` as a single line
/// `error: <kind>: <message>`; the return value is the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace knnood::cli
