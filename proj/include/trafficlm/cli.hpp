#pragma once

#include <iosfwd>

namespace trafficlm {

/// Entry point of the `trafficlm` command. Returns the process exit code:
/// 0 success, 1 usage or configuration error, 2 data error, 3 internal error.
/// Results meant for the user go to `out`, diagnostics to `err`.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

}  // namespace trafficlm
