// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/analytics.hpp>
#include <scaleswe/config.hpp>
#include <scaleswe/cost.hpp>
#include <scaleswe/prompts.hpp>
#include <scaleswe/selection.hpp>
#include <scaleswe/store.hpp>
#include <scaleswe/tokens.hpp>

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace scaleswe
{

/// Reads one instance descriptor:
///   {schema_version, instance_id, issue_text | issue_file, snapshot,
///    source_file_filter?, gold_edit_files?, oracle?: {command, timeout_s}}
[[nodiscard]] Instance load_instance_descriptor(const fs::path& path);

/// Every `<dir>/*/instance.json` and `<dir>/*.json`, sorted by instance_id.
[[nodiscard]] std::vector<Instance> load_dataset(const fs::path& dir);

struct StageReport
{
    explicit StageReport(std::string name = {}): stage(std::move(name)) {}

    std::string stage;
    int scheduled = 0;
    int completed = 0;
    int skipped = 0;
    std::vector<std::string> failures;
    std::vector<std::string> notes;
    /// Human-readable result (tables, summaries).
    std::string output;

    [[nodiscard]] bool ok() const { return failures.empty(); }
    [[nodiscard]] std::string text() const;
};

struct PipelineOptions
{
    bool force = false;
    /// First N instances by id.
    std::optional<int> limit;
    /// Debug: mock backends terminate the process after this many calls.
    std::optional<int> abort_after_calls;
    /// Overrides the configured store root.
    std::optional<fs::path> store_root;
};

/// Recomputes the cost ledger from stored artifacts into `ledger`.
void compute_ledger(const RunStore& store, const std::vector<Instance>& instances, const RunConfig& config, CostLedger& ledger);

class Pipeline
{
  public:
    Pipeline(RunConfig config, PipelineOptions options = {});

    StageReport context();
    StageReport generate();
    StageReport select(SelectionMethod method);
    StageReport ensemble_select(const std::vector<fs::path>& prediction_files);
    StageReport analyze();
    StageReport costs();
    /// Submission records {instance_id, patch}.
    StageReport export_selections(SelectionMethod method, const fs::path& out);

    [[nodiscard]] RunStore& store() { return *_store; }
    [[nodiscard]] const std::vector<Instance>& instances() const { return _instances; }
    [[nodiscard]] const RunConfig& config() const { return _config; }
    [[nodiscard]] const PromptLibrary& prompts() const { return _prompts; }
    /// Instrumented mocks; null for live backends.
    [[nodiscard]] MockBackend* primary_mock() const { return _primary_mock.get(); }
    [[nodiscard]] MockBackend* scanner_mock() const { return _scanner_mock.get(); }

  private:
    MachineEnv env(ChatBackend& backend, const MachineConfig& config, TrajectorySink sink = {}) const;

    RunConfig _config;
    PipelineOptions _options;
    std::vector<Instance> _instances;
    std::unique_ptr<RunStore> _store;
    PromptLibrary _prompts;
    Sandbox _sandbox;
    std::shared_ptr<ChatBackend> _primary;
    std::shared_ptr<ChatBackend> _scanner;
    std::shared_ptr<MockBackend> _primary_mock;
    std::shared_ptr<MockBackend> _scanner_mock;
    ByteHeuristicCounter _counter;
};

} // namespace scaleswe
