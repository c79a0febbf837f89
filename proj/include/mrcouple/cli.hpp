#pragma once

namespace mrcouple {

/// Entry point of the `mrcouple` executable.
/// Exit codes: 0 success / property holds, 1 failure, 2 configuration error.
int run_cli(int argc, char** argv);

}  // namespace mrcouple
