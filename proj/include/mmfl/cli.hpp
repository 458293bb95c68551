#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmfl {

// argv[0] is the program name. Exit codes: 0 success, 2 usage or config
// error, 1 runtime failure.
int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

// Plain-text report of a log CSV: final-round table then the per-round F1
// trajectory of every mode.
std::string format_report(const std::string& log_path);

}  // namespace mmfl
