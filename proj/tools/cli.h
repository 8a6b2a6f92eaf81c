#pragma once

namespace lcp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInfeasible = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitFormat = 4;

// Parses argv, runs one subcommand and maps failures to exit codes.
int run(int argc, char** argv);

}  // namespace lcp::cli
