#pragma once

namespace misent::cli {

// Runs one CLI invocation. Exit codes: 0 success, 1 usage error, 2 data or
// validation error, 3 numerical failure.
int run(int argc, const char* const* argv);

}  // namespace misent::cli
