#ifndef LSAE_CLI_HPP
#define LSAE_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace lsae::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kData = 2,
    kIo = 3,
};

/// Runs one `sae-steer` invocation. `args` excludes the program name. Each
/// subcommand writes a single JSON object to `out`; logs and usage go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace lsae::cli

#endif // LSAE_CLI_HPP
