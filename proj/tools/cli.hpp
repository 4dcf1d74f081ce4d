#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace impulse::cli {

/// Exit codes: 0 success or pass, 1 a check ran and failed, 2 any error
/// (bad flags, invalid files, I/O, or a computation that could not finish).
inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitInput = 2;

/// args excludes the program name. Data goes to `out` unless --out is given;
/// summaries and errors go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace impulse::cli
