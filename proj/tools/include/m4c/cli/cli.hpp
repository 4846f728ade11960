#pragma once

#include <iosfwd>

namespace m4c::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point behind the m4c binary: gen | train | predict | eval | phoc.
/// Primary results go to `out` (or files); progress and warnings to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace m4c::cli
