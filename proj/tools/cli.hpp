#pragma once

#include <iosfwd>

namespace sntf::cli {

enum ExitCode : int { ok = 0, usage = 2, data = 3, numerical = 4 };

/// Runs one CLI invocation; diagnostics go to err as a single line.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace sntf::cli
