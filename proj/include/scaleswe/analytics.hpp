// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/cost.hpp>
#include <scaleswe/selection.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scaleswe
{

/// Fraction of instances with at least one correct candidate.
[[nodiscard]] double coverage(const std::vector<std::vector<bool>>& correctness);

struct CandidatePool
{
    int n = 0; ///< candidates
    int c = 0; ///< correct candidates
};

/// Probability that a uniform k-subset of n holds at least one of c correct.
[[nodiscard]] double subset_hit_probability(int n, int c, int k);

/// Mean over instances of subset_hit_probability; k > n is a ContractError.
[[nodiscard]] double coverage_at_k(const std::vector<CandidatePool>& pools, int k);

/// Restricts a per-machine matrix to the machines in `subset`: rows are
/// their edits, columns their tests (all columns when tests are not per machine).
[[nodiscard]] VoteMatrix restrict_matrix(const VoteMatrix& matrix, const std::vector<std::size_t>& subset);

/// Expected majority score of a random k-machine subset. Enumerates all
/// subsets when n <= 12, otherwise averages `samples` seeded draws.
[[nodiscard]] double expected_majority_score_at_k(const VoteMatrix& matrix,
                                                  const std::vector<bool>& correct,
                                                  int k,
                                                  int samples = 1000,
                                                  std::uint64_t seed = 0);

/// Per-instance data for one truncation depth.
struct TruncatedRun
{
    VoteMatrix matrix;
    std::vector<bool> correct;
    /// Recorded cost of each machine's turns up to this depth.
    std::vector<Picodollars> machine_cost;
};

struct SweepInstance
{
    std::string instance_id;
    /// Index i-1 holds the run truncated at iteration i.
    std::vector<TruncatedRun> by_iteration;
};

struct SweepPoint
{
    int k_machines = 0;
    int i_iterations = 0;
    double coverage = 0.0;
    double score = 0.0;
    double estimated_cost_usd = 0.0;
    int instances = 0;

    bool operator==(const SweepPoint&) const = default;
};

struct SweepResult
{
    std::vector<SweepPoint> points;
    /// Instances missing the requested depth or machine count.
    int excluded = 0;
};

/// Coverage, expected majority score, and cost over a grid of machine
/// counts and iteration limits.
[[nodiscard]] SweepResult sweep(const std::vector<SweepInstance>& instances,
                                const std::vector<int>& ks,
                                const std::vector<int>& is,
                                int samples = 1000,
                                std::uint64_t seed = 0);

[[nodiscard]] std::string sweep_csv(const SweepResult& result);

struct GapRow
{
    std::string name;
    double score = 0.0;
    /// (score - random) / (oracle - random); absent when oracle == random.
    std::optional<double> recovered;
};

/// Rows: random expectation, each method, then the oracle (coverage).
[[nodiscard]] std::vector<GapRow> selection_gap_report(
    const std::vector<std::vector<bool>>& correctness,
    const std::map<std::string, std::vector<std::size_t>>& selections);

[[nodiscard]] std::string gap_report_text(const std::vector<GapRow>& rows);
[[nodiscard]] std::string gap_report_csv(const std::vector<GapRow>& rows);

struct SubtaskSummary
{
    std::optional<double> recall;
    int recall_counted = 0;
    double coverage = 0.0;
    std::map<std::string, double> scores;
    int instances = 0;
};

[[nodiscard]] std::string summary_text(const SubtaskSummary& summary);

void to_json(json& j, const SweepPoint& v);
void to_json(json& j, const GapRow& v);

} // namespace scaleswe
