// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/context.hpp>
#include <scaleswe/cost.hpp>
#include <scaleswe/llm.hpp>
#include <scaleswe/machines.hpp>
#include <scaleswe/sandbox.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace scaleswe
{

struct BackendSpec
{
    /// "mock" or "http".
    std::string kind = "mock";
    std::vector<fs::path> playbooks;
    int latency_ms = 0;
    HttpBackendConfig http;
    RetryPolicy retry;
    /// Record live exchanges to, or replay them from, this directory.
    std::optional<fs::path> cassette_dir;
    CassetteMode cassette_mode = CassetteMode::record;
};

struct WorkerLimits
{
    /// Instances processed at once by per-instance stages.
    int instances = 4;
    /// (instance, machine) units in flight during generation.
    int machines = 10;
    /// Concurrent requests per backend.
    int backend_requests = 16;
    /// Concurrent sandbox executions within one vote matrix.
    int cells = 4;
};

struct AnalysisConfig
{
    /// Empty means 1..machines_per_instance and 1..editing.max_completions.
    std::vector<int> ks;
    std::vector<int> is;
    int samples = 1000;
    std::uint64_t seed = 0;
};

struct RunConfig
{
    std::string run_id = "run";
    fs::path dataset;
    fs::path store_root = "runs";
    int machines_per_instance = 10;
    MachineConfig testing {8, 0.5, 4096, std::nullopt};
    MachineConfig editing {8, 0.5, 4096, std::nullopt};
    MachineConfig selection {10, 0.0, 4096, std::nullopt};
    ContextConfig context;
    SandboxConfig sandbox;
    PriceTable prices;
    WorkerLimits workers;
    BackendSpec scanner;
    BackendSpec primary;
    std::optional<fs::path> prompts_dir;
    /// When set, relevance scanning is costed as self-hosted compute.
    std::optional<LocalComputeSpec> relevance_local_compute;
    AnalysisConfig analysis;
    /// The config document as written, minus the store root.
    json document;

    /// Throws ContractError listing the first invalid field.
    void validate() const;

    /// Relative paths resolve against the config file's directory.
    static RunConfig load(const fs::path& path);
    static RunConfig from_json(const json& document, const fs::path& base_dir);
};

/// Builds a backend stack: mock or http, then cassette, retry, and throttle.
[[nodiscard]] std::shared_ptr<ChatBackend> make_backend(const BackendSpec& spec,
                                                        int max_in_flight,
                                                        std::shared_ptr<MockBackend>* mock_out = nullptr);

} // namespace scaleswe
