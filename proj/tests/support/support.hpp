// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/llm.hpp>
#include <scaleswe/machines.hpp>
#include <scaleswe/prompts.hpp>

#include <fmt/format.h>
#include <scaleswe/sandbox.hpp>

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace testing
{

namespace fs = scaleswe::fs;
using scaleswe::json;

/// Unique directory removed on destruction.
class TempDir
{
  public:
    TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir();

    [[nodiscard]] const fs::path& path() const { return _path; }
    [[nodiscard]] fs::path operator/(const fs::path& rel) const { return _path / rel; }

  private:
    fs::path _path;
};

void write_file(const fs::path& path, std::string_view text);
[[nodiscard]] std::string read_file(const fs::path& path);

/// Instance whose snapshot holds `files` under `<dir>/snapshot`.
[[nodiscard]] scaleswe::Instance make_instance(const fs::path& dir,
                                               const std::map<std::string, std::string>& files,
                                               const std::string& id = "toy");

/// Playbook from (session pattern -> responses).
[[nodiscard]] scaleswe::Playbook playbook(const std::map<std::string, std::vector<std::string>>& sessions);

[[nodiscard]] fs::path fixture_corpus();
[[nodiscard]] fs::path cli_binary();

/// Sandbox whose workspaces live under `root`.
[[nodiscard]] scaleswe::Sandbox make_sandbox(const fs::path& root, double timeout_s = 30.0);

/// Python one-liners as test scripts.
[[nodiscard]] scaleswe::TestScript exit_script(int code);

/// Exhaustive fraction of k-subsets of n items holding one of the first c.
[[nodiscard]] double enumerate_subset_hits(int n, int c, int k);

/// Average correctness of the deployment winner over every priority order
/// of the candidates, so ties resolve uniformly.
[[nodiscard]] double enumerate_tie_resolutions(const std::vector<int>& pass_counts, const std::vector<bool>& correct);

/// Bundles the pieces a machine run needs.
struct Harness
{
    explicit Harness(scaleswe::Playbook pb, double timeout_s = 30.0);

    TempDir dir;
    std::shared_ptr<scaleswe::MockBackend> backend;
    scaleswe::Sandbox sandbox;
    scaleswe::PromptLibrary prompts;

    [[nodiscard]] scaleswe::MachineEnv env(scaleswe::MachineConfig config = {}, scaleswe::TrajectorySink sink = {});
};

} // namespace testing
