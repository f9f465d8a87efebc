#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fluxml {

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on a domain error and 2 on a usage error; diagnostics go to
/// `err`, summaries to `out`.
///
/// Settings resolve as built-in defaults, then top-level keys of the JSON
/// file given by --config, then its section named after the subcommand,
/// then flags. Artifacts land in <out>/<command>-<hash>/ where the hash
/// covers the resolved settings and the checksums of every input.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fluxml
