// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/analytics.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

namespace scaleswe
{

double coverage(const std::vector<std::vector<bool>>& correctness)
{
    if (correctness.empty())
        return 0.0;
    int hits = 0;
    for (auto const& row: correctness)
    {
        if (row.empty())
            throw ContractError("coverage: every instance needs at least one evaluated candidate");
        hits += std::find(row.begin(), row.end(), true) != row.end() ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(correctness.size());
}

double subset_hit_probability(int n, int c, int k)
{
    if (n < 1 || c < 0 || c > n || k < 1 || k > n)
        throw ContractError(fmt::format("subset probability needs 1 <= k <= n and 0 <= c <= n (n={}, c={}, k={})", n, c, k));
    if (n - c < k)
        return 1.0;
    // C(n-c, k) / C(n, k) as a running product of ratios below one.
    double miss = 1.0;
    for (int j = 0; j < k; ++j)
        miss *= static_cast<double>(n - c - j) / static_cast<double>(n - j);
    return 1.0 - miss;
}

double coverage_at_k(const std::vector<CandidatePool>& pools, int k)
{
    if (pools.empty())
        return 0.0;
    double total = 0.0;
    for (auto const& p: pools)
    {
        if (k > p.n)
            throw ContractError(fmt::format("coverage_at_k: k={} exceeds the {} available candidates", k, p.n));
        total += subset_hit_probability(p.n, p.c, k);
    }
    return total / static_cast<double>(pools.size());
}

VoteMatrix restrict_matrix(const VoteMatrix& matrix, const std::vector<std::size_t>& subset)
{
    auto const per_machine = matrix.tests() == matrix.candidates();
    auto out = VoteMatrix {};
    for (auto const r: subset)
    {
        out.candidate_ids.push_back(matrix.candidate_ids.at(r));
        out.diff_lengths.push_back(matrix.diff_lengths.at(r));
        auto row = std::vector<TestOutcome> {};
        if (per_machine)
        {
            for (auto const c: subset)
                row.push_back(matrix.outcome[r][c]);
        }
        else
        {
            row = matrix.outcome[r];
        }
        out.pass_counts.push_back(static_cast<int>(std::count(row.begin(), row.end(), TestOutcome::pass)));
        out.outcome.push_back(std::move(row));
    }
    return out;
}

namespace
{

double subset_score(const VoteMatrix& matrix, const std::vector<bool>& correct, const std::vector<std::size_t>& subset)
{
    auto flags = std::vector<bool> {};
    for (auto const i: subset)
        flags.push_back(correct[i]);
    return majority_expected_score(restrict_matrix(matrix, subset), flags);
}

/// Advances `idx` to the next k-combination of [0, n); false after the last.
bool next_combination(std::vector<std::size_t>& idx, std::size_t n)
{
    auto const k = idx.size();
    for (auto i = k; i-- > 0;)
    {
        if (idx[i] < n - k + i)
        {
            ++idx[i];
            for (auto j = i + 1; j < k; ++j)
                idx[j] = idx[j - 1] + 1;
            return true;
        }
    }
    return false;
}

} // namespace

double expected_majority_score_at_k(const VoteMatrix& matrix,
                                    const std::vector<bool>& correct,
                                    int k,
                                    int samples,
                                    std::uint64_t seed)
{
    auto const n = matrix.candidates();
    if (k < 1 || static_cast<std::size_t>(k) > n)
        throw ContractError(fmt::format("majority score at k={} over {} candidates", k, n));
    if (correct.size() != n)
        throw ContractError("majority score: correctness must cover every candidate");

    auto const kk = static_cast<std::size_t>(k);
    if (n <= 12)
    {
        auto idx = std::vector<std::size_t>(kk);
        std::iota(idx.begin(), idx.end(), std::size_t {0});
        double total = 0.0;
        std::int64_t count = 0;
        do
        {
            total += subset_score(matrix, correct, idx);
            ++count;
        } while (next_combination(idx, n));
        return total / static_cast<double>(count);
    }

    auto rng = std::mt19937_64(seed);
    auto pool = std::vector<std::size_t>(n);
    double total = 0.0;
    for (int s = 0; s < samples; ++s)
    {
        std::iota(pool.begin(), pool.end(), std::size_t {0});
        for (std::size_t i = 0; i < kk; ++i)
        {
            auto const j = i + static_cast<std::size_t>(rng() % (n - i));
            std::swap(pool[i], pool[j]);
        }
        auto subset = std::vector<std::size_t>(pool.begin(), pool.begin() + k);
        std::sort(subset.begin(), subset.end());
        total += subset_score(matrix, correct, subset);
    }
    return total / samples;
}

SweepResult sweep(const std::vector<SweepInstance>& instances,
                  const std::vector<int>& ks,
                  const std::vector<int>& is,
                  int samples,
                  std::uint64_t seed)
{
    auto result = SweepResult {};
    auto excluded = std::set<std::string> {};
    for (auto const k: ks)
    {
        for (auto const i: is)
        {
            if (k < 1 || i < 1)
                throw ContractError(fmt::format("sweep point k={} i={} out of range", k, i));
            auto point = SweepPoint {k, i};
            double cov = 0.0;
            double score = 0.0;
            double cost_fraction = 0.0;
            for (auto const& inst: instances)
            {
                if (static_cast<std::size_t>(i) > inst.by_iteration.size())
                {
                    excluded.insert(inst.instance_id);
                    continue;
                }
                auto const& run = inst.by_iteration[static_cast<std::size_t>(i - 1)];
                auto const n = static_cast<int>(run.correct.size());
                if (k > n || run.matrix.candidates() != run.correct.size())
                {
                    excluded.insert(inst.instance_id);
                    continue;
                }
                auto const c = static_cast<int>(std::count(run.correct.begin(), run.correct.end(), true));
                cov += subset_hit_probability(n, c, k);
                score += expected_majority_score_at_k(run.matrix, run.correct, k, samples, seed);
                auto const machines = std::accumulate(run.machine_cost.begin(), run.machine_cost.end(), Picodollars {0});
                cost_fraction += pico_to_dollars(machines) * static_cast<double>(k) / static_cast<double>(n);
                ++point.instances;
            }
            if (point.instances > 0)
            {
                point.coverage = cov / point.instances;
                point.score = score / point.instances;
            }
            point.estimated_cost_usd = cost_fraction;
            result.points.push_back(point);
        }
    }
    result.excluded = static_cast<int>(excluded.size());
    return result;
}

std::string sweep_csv(const SweepResult& result)
{
    auto out = std::string("k_machines,i_iterations,coverage,score,estimated_cost_usd,instances\n");
    for (auto const& p: result.points)
        out += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{}\n",
                           p.k_machines,
                           p.i_iterations,
                           p.coverage,
                           p.score,
                           p.estimated_cost_usd,
                           p.instances);
    return out;
}

std::vector<GapRow> selection_gap_report(const std::vector<std::vector<bool>>& correctness,
                                         const std::map<std::string, std::vector<std::size_t>>& selections)
{
    if (correctness.empty())
        throw ContractError("gap report needs at least one instance");
    double random = 0.0;
    for (auto const& row: correctness)
    {
        if (row.empty())
            throw ContractError("gap report: every instance needs candidates");
        random += static_cast<double>(std::count(row.begin(), row.end(), true)) / static_cast<double>(row.size());
    }
    random /= static_cast<double>(correctness.size());
    auto const oracle = coverage(correctness);

    auto recovered = [&](double score) -> std::optional<double> {
        if (oracle - random <= 0.0)
            return std::nullopt;
        return (score - random) / (oracle - random);
    };

    auto rows = std::vector<GapRow> {{"random", random, recovered(random)}};
    for (auto const& [name, picks]: selections)
    {
        if (picks.size() != correctness.size())
            throw ContractError(fmt::format("gap report: method '{}' covers {} of {} instances",
                                            name,
                                            picks.size(),
                                            correctness.size()));
        int hits = 0;
        for (std::size_t i = 0; i < picks.size(); ++i)
        {
            if (picks[i] >= correctness[i].size())
                throw ContractError(fmt::format("gap report: method '{}' picked a missing candidate", name));
            hits += correctness[i][picks[i]] ? 1 : 0;
        }
        auto const score = static_cast<double>(hits) / static_cast<double>(picks.size());
        rows.push_back({name, score, recovered(score)});
    }
    rows.push_back({"oracle", oracle, recovered(oracle)});
    return rows;
}

std::string gap_report_text(const std::vector<GapRow>& rows)
{
    auto out = fmt::format("{:<16} {:>8} {:>12}\n", "Selection", "Score", "Gap closed");
    for (auto const& r: rows)
    {
        auto const gap = r.recovered ? fmt::format("{:.1f}%", 100.0 * *r.recovered) : std::string("n/a");
        out += fmt::format("{:<16} {:>7.1f}% {:>12}\n", r.name, 100.0 * r.score, gap);
    }
    return out;
}

std::string gap_report_csv(const std::vector<GapRow>& rows)
{
    auto out = std::string("selection,score,recovered\n");
    for (auto const& r: rows)
        out += fmt::format("{},{:.6f},{}\n", r.name, r.score, r.recovered ? fmt::format("{:.6f}", *r.recovered) : "");
    return out;
}

std::string summary_text(const SubtaskSummary& s)
{
    auto out = fmt::format("Instances: {}\n", s.instances);
    if (s.recall)
        out += fmt::format("Context recall: {:.1f}% ({} instances with gold files)\n", 100.0 * *s.recall, s.recall_counted);
    else
        out += "Context recall: n/a (no gold files)\n";
    out += fmt::format("Coverage: {:.1f}%\n", 100.0 * s.coverage);
    for (auto const& [method, score]: s.scores)
        out += fmt::format("Score ({}): {:.1f}%\n", method, 100.0 * score);
    return out;
}

void to_json(json& j, const SweepPoint& v)
{
    j = json {{"k_machines", v.k_machines},
              {"i_iterations", v.i_iterations},
              {"coverage", v.coverage},
              {"score", v.score},
              {"estimated_cost_usd", v.estimated_cost_usd},
              {"instances", v.instances}};
}

void to_json(json& j, const GapRow& v)
{
    j = json {{"name", v.name}, {"score", v.score}, {"recovered", v.recovered ? json(*v.recovered) : json(nullptr)}};
}

} // namespace scaleswe
