#pragma once

namespace tfk {

inline constexpr const char* kToolVersion = "0.1.0";

/// Entry point of the `tfk` executable. Returns 0 on success, 1 on a runtime
/// failure and 2 on a usage error.
int run_cli(int argc, const char* const* argv);

}  // namespace tfk
