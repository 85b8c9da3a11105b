#ifndef SNF_CLI_HPP
#define SNF_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace snf::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kUnreachable = 3,
};

/// Runs one command line (args excludes the program name). Diagnostics go to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace snf::cli

#endif  // SNF_CLI_HPP
