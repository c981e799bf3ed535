#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace xdet::cli {

/// Runs one subcommand. `args` excludes the program name. Data goes to
/// `out` (or the --out file), diagnostics to `err`. Returns 0 on success,
/// 1 on data errors and 2 on usage errors.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace xdet::cli
