#pragma once

#include <iosfwd>

namespace qkdnet::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kScenarioError = 1;
inline constexpr int kWorkloadFailure = 2;
inline constexpr int kUsage = 64;

// Entry point behind the qkdnet binary; reports go to `out`, diagnostics to `err`.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qkdnet::cli
