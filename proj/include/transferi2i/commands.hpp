#pragma once

#include <string>
#include <vector>

namespace transferi2i::cli {

/// Entry point of the `transferi2i` tool. Errors are reported as one
/// "<CODE>: <message>" line on stderr with a nonzero exit status.
int run(int argc, char** argv);

/// Same, from an argument vector without the program name.
int run(const std::vector<std::string>& args);

}  // namespace transferi2i::cli
