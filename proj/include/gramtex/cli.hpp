#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gramtex {

/// Runs one CLI invocation (`args` excludes the program name). Returns the
/// process exit status. On failure a single line
///   error: code=<code> message="<text>"
/// is written to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gramtex
