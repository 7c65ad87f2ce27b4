#pragma once

#include <string>
#include <vector>

namespace mpenssar::cli {

/// Entry point behind the command-line binary. `args` is argv without the
/// program name. Returns the process exit code: 0 success, 2 configuration
/// error, 3 numerical error, 4 I/O error. Diagnostics go to stderr.
int run(const std::vector<std::string>& args);

}  // namespace mpenssar::cli
