#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rcnn::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumeric = 4 };

/// Entry point of the `rcnn` command; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// 10186 -> "10,186".
std::string group_thousands(long long value);

}  // namespace rcnn::cli
