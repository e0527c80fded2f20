#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tricov::cli {

enum ExitCode : int { kOk = 0, kNumericFailure = 1, kInputFailure = 2, kIoFailure = 3 };

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tricov::cli
