#pragma once

#include <string>
#include <vector>

namespace avbr::cli {

// Entry point for the avbr tool; args exclude argv[0].
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
int run(const std::vector<std::string>& args);

}  // namespace avbr::cli
