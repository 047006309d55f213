#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hyneter {

/// Runs one subcommand (build, forward, gradcheck, train, sweep, params).
/// `args` excludes the program name. Returns the process exit status.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hyneter
