#pragma once

#include <string>
#include <vector>

namespace cumulus {

/// Command-line entry point. Exit codes: 0 success, 1 domain error (capacity,
/// pruning, quantization, ...) with a one-line machine-parsable reason on
/// stderr, 2 usage error.
int run_cli(const std::vector<std::string>& args);

}  // namespace cumulus
