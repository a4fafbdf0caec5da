// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/context.hpp>
#include <scaleswe/core.hpp>
#include <scaleswe/llm.hpp>
#include <scaleswe/prompts.hpp>
#include <scaleswe/sandbox.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace scaleswe
{

struct MachineConfig
{
    int max_completions = 8;
    double temperature = 0.5;
    int max_output_tokens = 4096;
    /// Overrides the sandbox timeout for generated scripts.
    std::optional<double> timeout_s;

    void validate() const;
};

void to_json(json& j, const MachineConfig& v);
void from_json(const json& j, MachineConfig& v);

/// Receives the trajectory after every completed step (persistence hook).
using TrajectorySink = std::function<void(const Trajectory&)>;

struct MachineEnv
{
    ChatBackend& backend;
    const Sandbox& sandbox;
    const PromptLibrary& prompts;
    MachineConfig config;
    TrajectorySink sink;
};

[[nodiscard]] bool action_permitted(MachineKind machine, ActionKind action);

/// Snapshot after completion `i` (1-based), frozen at the last completion
/// for larger i. Returns nullptr when the trajectory has no snapshots.
[[nodiscard]] const IterationSnapshot* truncate_at_iteration(const Trajectory& trajectory, int i);

/// A trajectory that can be continued: no terminal status yet, or stopped
/// by a backend failure.
[[nodiscard]] bool resumable(const Trajectory& trajectory);

/// Writes tests with feedback from the unedited repository. Codebase context
/// is not part of the prompt.
Trajectory run_testing_machine(const Instance& instance,
                               const std::string& trajectory_id,
                               MachineEnv env,
                               const Trajectory* resume_from = nullptr);

/// Seeds from the final test of a testing trajectory with a fresh chat.
Trajectory run_editing_machine(const Instance& instance,
                               const RankedContext& context,
                               const Trajectory& seed,
                               const std::string& trajectory_id,
                               MachineEnv env,
                               const Trajectory* resume_from = nullptr);

struct SelectionOutcome
{
    std::size_t index = 0;
    Trajectory trajectory;
    /// True when the machine ran out of completions and the fallback chose.
    bool fell_back = false;
    /// Selection-machine test passes per candidate.
    std::vector<int> passes;
};

/// Writes distinguishing tests and selects a candidate. On exhaustion the
/// candidate passing the most of its tests wins, ties by shorter diff then id.
SelectionOutcome run_selection_machine(const Instance& instance,
                                       const std::vector<CandidateSample>& candidates,
                                       const TestScript& example_test,
                                       const std::string& trajectory_id,
                                       MachineEnv env,
                                       const Trajectory* resume_from = nullptr);

/// `<diff>` sections for each candidate, numbered from 0.
[[nodiscard]] std::string render_candidates(const Sandbox& sandbox,
                                            const Instance& instance,
                                            const std::vector<CandidateSample>& candidates);

} // namespace scaleswe
