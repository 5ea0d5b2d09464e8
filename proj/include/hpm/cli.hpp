#pragma once

// Command-line front end. Kept callable in-process so tests can drive whole
// commands and inspect exit codes: 0 success, 1 runtime failure, 2 usage or
// config error.

namespace hpm {

int run_cli(int argc, const char* const* argv);

}  // namespace hpm
