#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace polypforge::cli {

/// Parses `args` (program name first), runs one subcommand and returns the
/// exit code: 0 ok, 1 runtime failure, 2 invalid config, 3 missing upstream
/// artifact. Artifact paths go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace polypforge::cli
