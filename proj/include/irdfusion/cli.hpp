#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace irdfusion {

/// Exit codes: 0 success, 1 usage or contract violation, 2 verification failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitContract = 1;
inline constexpr int kExitVerification = 2;

/// `args` excludes the program name. Reports go to `out` unless --out names
/// a file; diagnostics and usage go to `err`.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, char** argv);

}  // namespace irdfusion
