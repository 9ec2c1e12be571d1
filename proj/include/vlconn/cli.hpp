#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vlconn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Parses and runs one subcommand: gradcheck, forward, cost, toy-train,
// compare, score or advise. Returns the process exit code.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vlconn::cli
