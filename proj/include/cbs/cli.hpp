#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cbs {

/// Runs the `cbs` command line. args[0] is the program name. Returns 0 on
/// success or --help, 2 on usage errors, 1 on runtime failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace cbs
