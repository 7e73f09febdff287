#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace savt::cli {

// Entry point behind the savt binary; exposed so tests and the acceptance
// suite can drive subcommands in-process. args excludes the program name.
// Exit codes: 0 success, 1 runtime failure, 2 usage or input parse error.
int run(std::vector<std::string> args, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

}  // namespace savt::cli
