#pragma once

#include <string>
#include <vector>

namespace ndm::cli {

// Entry point for the `ndm` tool; args exclude the program name. Returns a
// process exit status. On failure prints a single machine-parseable
// `error: ...` line to stderr and removes any partially written outputs.
int run(std::vector<std::string> args);

}  // namespace ndm::cli
