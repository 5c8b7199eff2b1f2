#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmfusion::cli {

// Runs one command line (without the program name). Errors are reported on
// `err` as "<category>: <message>" and mapped to a nonzero exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmfusion::cli
