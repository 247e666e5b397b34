#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dilate::cli {

inline constexpr std::string_view kVersion = "1.0.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `dilate` tool. `args` excludes the program name. Logs go to stderr;
/// nothing machine-readable is written to stdout.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace dilate::cli
