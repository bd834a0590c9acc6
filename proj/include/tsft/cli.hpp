#pragma once

#include <ostream>

namespace tsft {

// Entry point of the tsft command-line tool. Returns the process exit code:
// 0 on success, 1 on runtime errors, 2 on usage errors. Errors are reported
// as a single line on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tsft
