#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace precondlab::cli {

// Exit codes of the command-line tool.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kVerifyFailed = 4;
inline constexpr int kRuntimeError = 5;

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace precondlab::cli
