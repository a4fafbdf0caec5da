// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <numeric>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

namespace testing
{

TempDir::TempDir()
{
    static std::atomic<int> counter {0};
    auto rng = std::random_device {};
    _path = fs::temp_directory_path() /
            fmt::format("scaleswe-test-{}-{}-{:08x}", ::getpid(), counter++, rng());
    fs::create_directories(_path);
}

TempDir::~TempDir()
{
    std::error_code ec;
    fs::remove_all(_path, ec);
}

void write_file(const fs::path& path, std::string_view text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    auto out = std::ofstream(path, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_file(const fs::path& path)
{
    auto in = std::ifstream(path, std::ios::binary);
    auto buffer = std::ostringstream {};
    buffer << in.rdbuf();
    return buffer.str();
}

scaleswe::Instance make_instance(const fs::path& dir, const std::map<std::string, std::string>& files, const std::string& id)
{
    auto const snapshot = dir / "snapshot";
    fs::create_directories(snapshot);
    for (auto const& [rel, text]: files)
        write_file(snapshot / rel, text);
    auto instance = scaleswe::Instance {};
    instance.instance_id = id;
    instance.issue_text = "Something is broken.";
    instance.codebase_ref = snapshot;
    instance.instance_dir = dir;
    return instance;
}

scaleswe::Playbook playbook(const std::map<std::string, std::vector<std::string>>& sessions)
{
    auto pb = scaleswe::Playbook {};
    for (auto const& [key, texts]: sessions)
    {
        auto entries = std::vector<scaleswe::PlaybookEntry> {};
        for (auto const& t: texts)
            entries.push_back({t, std::nullopt, std::nullopt});
        pb.sessions.emplace(key, std::move(entries));
    }
    return pb;
}

fs::path fixture_corpus()
{
    return fs::path(SCALESWE_SOURCE_DIR) / "tests" / "fixtures" / "corpus";
}

fs::path cli_binary()
{
    return fs::path(SCALESWE_CLI_PATH);
}

scaleswe::Sandbox make_sandbox(const fs::path& root, double timeout_s)
{
    auto config = scaleswe::SandboxConfig {};
    config.workspace_root = root;
    config.timeout_s = timeout_s;
    return scaleswe::Sandbox(config);
}

scaleswe::TestScript exit_script(int code)
{
    return {fmt::format("import sys\nsys.exit({})\n", code)};
}

double enumerate_subset_hits(int n, int c, int k)
{
    int total = 0;
    int hits = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask)
    {
        if (std::popcount(mask) != k)
            continue;
        ++total;
        hits += (mask & ((1u << c) - 1)) != 0 ? 1 : 0;
    }
    return static_cast<double>(hits) / total;
}

double enumerate_tie_resolutions(const std::vector<int>& pass_counts, const std::vector<bool>& correct)
{
    auto order = std::vector<std::size_t>(pass_counts.size());
    std::iota(order.begin(), order.end(), std::size_t {0});
    int total = 0;
    int hits = 0;
    do
    {
        auto best = order.front();
        for (auto const i: order)
        {
            if (pass_counts[i] > pass_counts[best])
                best = i;
        }
        ++total;
        hits += correct[best] ? 1 : 0;
    } while (std::next_permutation(order.begin(), order.end()));
    return static_cast<double>(hits) / total;
}

Harness::Harness(scaleswe::Playbook pb, double timeout_s):
    backend(std::make_shared<scaleswe::MockBackend>(std::move(pb))),
    sandbox(make_sandbox(dir / "workspaces", timeout_s))
{
}

scaleswe::MachineEnv Harness::env(scaleswe::MachineConfig config, scaleswe::TrajectorySink sink)
{
    return scaleswe::MachineEnv {*backend, sandbox, prompts, config, std::move(sink)};
}

} // namespace testing
