// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/context.hpp>
#include <scaleswe/core.hpp>
#include <scaleswe/machines.hpp>
#include <scaleswe/sandbox.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scaleswe
{

/// outcome[i][j] is test j on candidate i's edited workspace.
struct VoteMatrix
{
    std::vector<std::string> candidate_ids;
    std::vector<std::size_t> diff_lengths;
    std::vector<std::vector<TestOutcome>> outcome;
    std::vector<int> pass_counts;

    [[nodiscard]] std::size_t candidates() const { return candidate_ids.size(); }
    [[nodiscard]] std::size_t tests() const { return outcome.empty() ? 0 : outcome.front().size(); }

    bool operator==(const VoteMatrix&) const = default;
};

void to_json(json& j, const VoteMatrix& v);
void from_json(const json& j, VoteMatrix& v);

/// Assembles a matrix from known outcomes and derives pass counts.
[[nodiscard]] VoteMatrix make_vote_matrix(const std::vector<CandidateSample>& candidates,
                                          std::vector<std::vector<TestOutcome>> outcome);

/// Cell outcomes keyed by (edit, test) content.
using OutcomeCache = std::map<std::string, TestOutcome>;

/// Runs every test against every candidate, each cell on a fresh workspace.
/// Identical (edit, test) pairs run once, and not at all when `cache` holds
/// them. A row whose edit does not apply is all error.
[[nodiscard]] VoteMatrix build_vote_matrix(const Instance& instance,
                                           const std::vector<CandidateSample>& candidates,
                                           const std::vector<TestScript>& tests,
                                           const Sandbox& sandbox,
                                           int workers = 1,
                                           OutcomeCache* cache = nullptr);

/// Deterministic winner: most passes, then shorter diff, then id.
[[nodiscard]] std::size_t majority_winner(const VoteMatrix& matrix);

/// Expected correctness when ties among the most-passing candidates are
/// broken uniformly at random.
[[nodiscard]] double majority_expected_score(const VoteMatrix& matrix, const std::vector<bool>& correct);

/// Up to k candidate indices ordered by (passes desc, diff length asc, id asc).
[[nodiscard]] std::vector<std::size_t> top_k_filter(const VoteMatrix& matrix, std::size_t k = 3);

enum class SelectionMethod
{
    majority,
    model,
    model_top3,
    machine_top3,
    ensemble,
};

NLOHMANN_JSON_SERIALIZE_ENUM(SelectionMethod,
                             {{SelectionMethod::majority, "majority"},
                              {SelectionMethod::model, "model"},
                              {SelectionMethod::model_top3, "model_top3"},
                              {SelectionMethod::machine_top3, "machine_top3"},
                              {SelectionMethod::ensemble, "ensemble"}})

[[nodiscard]] std::string_view to_string(SelectionMethod method);
[[nodiscard]] SelectionMethod selection_method_from_string(std::string_view name);

struct SelectionRecord
{
    std::string instance_id;
    SelectionMethod method = SelectionMethod::majority;
    /// Index into the candidate list the method was given.
    std::size_t selected_index = 0;
    std::string candidate_id;
    std::string source = "native";
    std::string patch;
    /// Candidates the final choice was made among, in presented order.
    std::vector<std::size_t> considered;
    std::optional<std::string> trajectory_id;
    bool fell_back = false;
    std::vector<std::string> notes;

    bool operator==(const SelectionRecord&) const = default;
};

void to_json(json& j, const SelectionRecord& v);
void from_json(const json& j, SelectionRecord& v);

struct ModelSelection
{
    std::size_t index = 0;
    bool fell_back = false;
    Trajectory trajectory;
};

/// Parses "```select:N" or a bare "select N".
[[nodiscard]] std::optional<int> parse_selection_reply(std::string_view reply);

/// One completion (plus one correction) choosing among candidates from the
/// issue, context, and diffs. Falls back to the shortest diff.
[[nodiscard]] ModelSelection model_select_single_turn(const Instance& instance,
                                                      const std::vector<CandidateSample>& candidates,
                                                      const RankedContext& context,
                                                      const std::string& session,
                                                      MachineEnv env);

/// Test from the candidate that passed the most generated tests, ties by
/// shorter diff then id. Only candidates carrying a test are considered.
[[nodiscard]] std::optional<TestScript> example_test(const std::vector<CandidateSample>& candidates, const VoteMatrix& matrix);

struct SelectionResult
{
    SelectionRecord record;
    std::optional<Trajectory> trajectory;
};

/// Dispatches one selection method. `matrix` is required for majority and
/// the top-3 methods; `context` for the model methods.
[[nodiscard]] SelectionResult select_candidate(const Instance& instance,
                                               const std::vector<CandidateSample>& candidates,
                                               const VoteMatrix* matrix,
                                               const RankedContext* context,
                                               SelectionMethod method,
                                               MachineEnv env,
                                               const Trajectory* resume_from = nullptr);

struct PredictionRecord
{
    std::string instance_id;
    std::string patch;
    std::string source_name;
};

/// Reads a JSON array or JSON-lines file of {instance_id, patch, source_name}.
/// `model_patch` / `model_name_or_path` are accepted as aliases.
[[nodiscard]] std::vector<PredictionRecord> load_prediction_file(const fs::path& path,
                                                                 const std::string& default_source = {});

struct EnsemblePool
{
    std::map<std::string, std::vector<CandidateSample>> by_instance;
    std::vector<std::string> dropped;
};

/// External candidates keyed by instance; ids are "<instance>/ext/<source>".
[[nodiscard]] EnsemblePool ingest_ensemble(const std::vector<PredictionRecord>& records);

/// Selection machine over the native pick plus external candidates, using
/// the native candidate's test as the example.
[[nodiscard]] SelectionResult ensemble_select(const Instance& instance,
                                              const CandidateSample& native,
                                              const std::vector<CandidateSample>& external,
                                              MachineEnv env,
                                              const Trajectory* resume_from = nullptr);

} // namespace scaleswe
