#pragma once

#include <iosfwd>

namespace fsner {

// Exit codes: 0 success, 1 unexpected failure, 2 usage, 3 data, 4 numeric.
int run_cli(int argc, const char* const* argv);
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fsner
