#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace agroforge::cli {

// Exit codes: 0 success, 1 stage error ("error: <ErrorName>: <message>" on
// err), 2 usage error (same line plus usage text).
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace agroforge::cli
