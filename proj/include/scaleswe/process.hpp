// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>

#include <map>
#include <string>
#include <vector>

namespace scaleswe
{

/// The requested program could not be started (distinct from it failing).
class SpawnError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

struct ProcessSpec
{
    std::vector<std::string> argv;
    fs::path working_directory;
    std::map<std::string, std::string> environment;
    double timeout_s = 100.0;
    std::size_t output_cap = kDefaultOutputCap;
};

/// Runs `argv[0]` (PATH-resolved) in its own process group. On timeout the
/// whole group is killed and `timed_out` is set; the group is also reaped
/// after a normal exit so stray children never outlive the call. A signal
/// death reports exit code 128 + signal.
[[nodiscard]] ExecutionResult run_process(const ProcessSpec& spec);

/// Picks `names` from the current environment.
[[nodiscard]] std::map<std::string, std::string> inherited_environment(const std::vector<std::string>& names);

} // namespace scaleswe
