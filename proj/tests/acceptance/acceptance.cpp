// SPDX-License-Identifier: Apache-2.0
// One PASS/FAIL line per acceptance criterion. Exit status is nonzero if any fails.
#include "support.hpp"

#include <scaleswe/analytics.hpp>
#include <scaleswe/context.hpp>
#include <scaleswe/cost.hpp>
#include <scaleswe/diff.hpp>
#include <scaleswe/pipeline.hpp>
#include <scaleswe/sandbox.hpp>
#include <scaleswe/selection.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

using namespace scaleswe;

namespace
{

struct Verdict
{
    bool pass = false;
    std::string detail;
};

struct Failure: std::runtime_error
{
    using std::runtime_error::runtime_error;
};

void expect(bool condition, const std::string& what)
{
    if (!condition)
        throw Failure(what);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

json payload(const fs::path& path)
{
    return json::parse(testing::read_file(path)).at("data");
}

int run_cli(const std::string& args, const fs::path& log)
{
    auto const command = fmt::format("'{}' {} >'{}' 2>&1", testing::cli_binary().string(), args, log.string());
    auto const status = std::system(command.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string run_args(const fs::path& store, const std::string& extra = {})
{
    return fmt::format("run -c '{}' --store '{}' {}",
                       (testing::fixture_corpus() / "run.json").string(),
                       store.string(),
                       extra);
}

/// First difference between two trees, or nothing when byte-identical.
std::optional<std::string> tree_difference(const fs::path& a, const fs::path& b)
{
    auto const listing = [](const fs::path& root) {
        auto files = std::map<std::string, fs::path> {};
        for (auto const& entry: fs::recursive_directory_iterator(root))
        {
            if (entry.is_regular_file())
                files[fs::relative(entry.path(), root).generic_string()] = entry.path();
        }
        return files;
    };
    auto const left = listing(a);
    auto const right = listing(b);
    for (auto const& [rel, path]: left)
    {
        auto const other = right.find(rel);
        if (other == right.end())
            return "only in first: " + rel;
        if (testing::read_file(path) != testing::read_file(other->second))
            return "differs: " + rel;
    }
    for (auto const& [rel, path]: right)
    {
        if (!left.contains(rel))
            return "only in second: " + rel;
    }
    if (left.empty())
        return std::string("empty store");
    return std::nullopt;
}

// 1

Verdict cost_table()
{
    auto const start = Clock::now();
    struct Row
    {
        Stage stage;
        double input, output, cache_read, cache_write, local;
    };
    auto const rows = std::vector<Row> {
        {Stage::relevance, 0.00, 0.00, 0.00, 0.00, 334.02},
        {Stage::ranking, 0.00, 11.92, 1.10, 6.90, 0.00},
        {Stage::gen_tests, 10.60, 295.15, 21.60, 112.64, 0.00},
        {Stage::gen_edits, 14.67, 353.95, 636.82, 360.58, 0.00},
        {Stage::selection, 0.52, 51.12, 15.17, 65.14, 0.00},
    };
    auto ledger = CostLedger {};
    for (auto const& r: rows)
    {
        ledger.add_amount(r.stage, CostClass::input, dollars_to_pico(r.input));
        ledger.add_amount(r.stage, CostClass::output, dollars_to_pico(r.output));
        ledger.add_amount(r.stage, CostClass::cache_read, dollars_to_pico(r.cache_read));
        ledger.add_amount(r.stage, CostClass::cache_write, dollars_to_pico(r.cache_write));
        ledger.add_amount(r.stage, CostClass::local, dollars_to_pico(r.local));
    }
    auto const table = render_ledger(ledger);
    auto const total = pico_to_dollars(table.total.total);
    expect(std::abs(total - 2291.90) < 0.005, fmt::format("total {:.2f}", total));
    auto const expected = std::vector<double> {14.6, 0.9, 19.2, 59.6, 5.8};
    expect(table.rows.size() == expected.size(), "row count");
    auto percents = std::string {};
    for (std::size_t i = 0; i < expected.size(); ++i)
    {
        auto const p = table.rows[i].percent;
        expect(std::abs(p - expected[i]) <= 0.05, fmt::format("{} at {:.3f}%", to_string(table.rows[i].stage), p));
        percents += fmt::format("{}{:.2f}", i ? "/" : "", p);
    }
    auto const elapsed = seconds_since(start);
    expect(elapsed < 1.0, fmt::format("took {:.3f} s", elapsed));
    return {true, fmt::format("total ${:.2f}, percentages {} ({:.1f} ms)", total, percents, elapsed * 1e3)};
}

// 2

Verdict local_cost()
{
    auto const start = Clock::now();
    auto const est = estimate_local_cost({8, 362.05, 0.2, 32e9, 1.32084e9, 8.24});
    expect(std::abs(est.tokens_per_second - 9051) <= 1.0, fmt::format("throughput {:.2f}", est.tokens_per_second));
    expect(std::abs(est.hours - 40.5) <= 0.1, fmt::format("hours {:.3f}", est.hours));
    expect(std::abs(est.usd - 334.02) <= 0.50, fmt::format("cost {:.2f}", est.usd));
    auto const elapsed = seconds_since(start);
    expect(elapsed < 1.0, fmt::format("took {:.3f} s", elapsed));
    return {true,
            fmt::format("{:.1f} tokens/s, {:.2f} h, ${:.2f} ({:.3f} ms)",
                        est.tokens_per_second,
                        est.hours,
                        est.usd,
                        elapsed * 1e3)};
}

// 4

struct FixtureOutcome
{
    bool covered = false;
    std::map<std::string, bool> resolved;
};

std::map<std::string, FixtureOutcome> read_outcomes(const fs::path& run_dir, const std::vector<std::string>& methods)
{
    auto out = std::map<std::string, FixtureOutcome> {};
    for (auto const& entry: fs::directory_iterator(run_dir / "instances"))
    {
        auto const id = entry.path().filename().string();
        auto const correctness = payload(entry.path() / "metrics" / "correctness.json");
        auto const ids = correctness.at("candidate_ids").get<std::vector<std::string>>();
        auto const correct = correctness.at("correct").get<std::vector<bool>>();
        auto& o = out[id];
        o.covered = std::find(correct.begin(), correct.end(), true) != correct.end();
        for (auto const& method: methods)
        {
            auto const record = payload(entry.path() / "selection" / (method + ".json"));
            auto const chosen = record.at("candidate_id").get<std::string>();
            auto const at = std::find(ids.begin(), ids.end(), chosen);
            expect(at != ids.end(), fmt::format("{}: {} selected unknown {}", id, method, chosen));
            o.resolved[method] = correct[static_cast<std::size_t>(at - ids.begin())];
        }
        auto const trajectories = entry.path() / "trajectories";
        int testing_count = 0;
        int editing_count = 0;
        for (auto const& t: fs::directory_iterator(trajectories))
        {
            auto const name = t.path().filename().string();
            testing_count += name.starts_with("testing-") ? 1 : 0;
            editing_count += name.starts_with("editing-") ? 1 : 0;
        }
        expect(testing_count == 10 && editing_count == 10,
               fmt::format("{}: {} testing and {} editing trajectories", id, testing_count, editing_count));
    }
    return out;
}

Verdict fixture_run(const fs::path& store)
{
    auto const start = Clock::now();
    auto const rc = run_cli(run_args(store), store.parent_path() / "fixture-run.log");
    auto const elapsed = seconds_since(start);
    expect(rc == 0, fmt::format("run exited {}", rc));
    expect(elapsed < 60.0, fmt::format("run took {:.1f} s", elapsed));

    auto const config = RunConfig::load(testing::fixture_corpus() / "run.json");
    expect(config.primary.kind == "mock", "primary backend is not the mock");
    auto const run_dir = store / config.run_id;
    auto const outcomes = read_outcomes(run_dir, {"majority", "machine_top3"});
    expect(outcomes.size() >= 5, fmt::format("{} instances", outcomes.size()));

    for (auto const id: {"calc_add", "stats_mean", "text_shout"})
    {
        auto const& o = outcomes.at(id);
        expect(o.covered, fmt::format("{} not covered", id));
        expect(o.resolved.at("majority") && o.resolved.at("machine_top3"), fmt::format("{} not resolved", id));
    }
    auto const& trap = outcomes.at("clamp_trap");
    expect(trap.covered, "clamp_trap not covered");
    expect(!trap.resolved.at("majority"), "clamp_trap: majority picked the correct edit");
    expect(trap.resolved.at("machine_top3"), "clamp_trap: machine_top3 missed the correct edit");
    auto const& hard = outcomes.at("date_day");
    expect(!hard.covered, "date_day unexpectedly covered");
    expect(!hard.resolved.at("majority") && !hard.resolved.at("machine_top3"), "date_day resolved");

    auto const n = static_cast<double>(outcomes.size());
    auto covered = 0.0;
    auto majority = 0.0;
    auto top3 = 0.0;
    for (auto const& [id, o]: outcomes)
    {
        covered += o.covered;
        majority += o.resolved.at("majority");
        top3 += o.resolved.at("machine_top3");
    }
    auto const summary = payload(run_dir / "reports" / "summary.json");
    expect(std::abs(summary.at("coverage").get<double>() - covered / n) < 1e-12, "summary coverage disagrees");
    expect(std::abs(summary.at("scores").at("majority").get<double>() - majority / n) < 1e-12,
           "summary majority score disagrees");
    expect(std::abs(summary.at("scores").at("machine_top3").get<double>() - top3 / n) < 1e-12,
           "summary machine_top3 score disagrees");
    return {true,
            fmt::format("happy fixtures coverage 1.0 score 1.0; clamp_trap majority wrong, machine_top3 right; "
                        "date_day coverage 0; overall coverage {:.1f}, majority {:.1f}, machine_top3 {:.1f} "
                        "({:.1f} s, mock backend)",
                        covered / n,
                        majority / n,
                        top3 / n,
                        elapsed)};
}

// 5

VoteMatrix from_rows(const std::vector<std::vector<TestOutcome>>& rows)
{
    auto candidates = std::vector<CandidateSample>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        candidates[i].candidate_id = fmt::format("m{:02}", i);
        candidates[i].edit.unified_diff = std::string(10 + i, 'x');
    }
    return make_vote_matrix(candidates, rows);
}

void check_all_flags(const VoteMatrix& m, const std::vector<int>& counts)
{
    auto const n = static_cast<int>(counts.size());
    for (unsigned flags = 0; flags < (1u << n); ++flags)
    {
        auto correct = std::vector<bool> {};
        for (int i = 0; i < n; ++i)
            correct.push_back((flags >> i) & 1u);
        auto const got = majority_expected_score(m, correct);
        auto const want = testing::enumerate_tie_resolutions(counts, correct);
        expect(std::abs(got - want) <= 1e-12, fmt::format("score {} vs {}", got, want));
    }
}

Verdict estimator_oracles()
{
    int coverage_cases = 0;
    for (int n = 1; n <= 6; ++n)
    {
        for (int c = 0; c <= n; ++c)
        {
            for (int k = 1; k <= n; ++k)
            {
                auto const got = coverage_at_k({{n, c}}, k);
                auto const want = testing::enumerate_subset_hits(n, c, k);
                expect(std::abs(got - want) <= 1e-12, fmt::format("coverage_at_k n={} c={} k={}", n, c, k));
                ++coverage_cases;
            }
        }
    }

    // Every raw pass/fail matrix for shapes with at most 12 cells.
    long raw = 0;
    for (int n = 1; n <= 5; ++n)
    {
        for (int t = 1; t <= 5 && n * t <= 12; ++t)
        {
            for (unsigned bits = 0; bits < (1u << (n * t)); ++bits)
            {
                auto rows = std::vector<std::vector<TestOutcome>>(static_cast<std::size_t>(n));
                auto counts = std::vector<int>(static_cast<std::size_t>(n), 0);
                for (int r = 0; r < n; ++r)
                {
                    for (int c = 0; c < t; ++c)
                    {
                        auto const pass = (bits >> (r * t + c)) & 1u;
                        rows[static_cast<std::size_t>(r)].push_back(pass ? TestOutcome::pass : TestOutcome::fail);
                        counts[static_cast<std::size_t>(r)] += static_cast<int>(pass);
                    }
                }
                check_all_flags(from_rows(rows), counts);
                ++raw;
            }
        }
    }

    // Every matrix up to 5x5, one representative per vector of row pass counts.
    long classes = 0;
    for (int n = 1; n <= 5; ++n)
    {
        for (int t = 1; t <= 5; ++t)
        {
            auto counts = std::vector<int>(static_cast<std::size_t>(n), 0);
            while (true)
            {
                auto rows = std::vector<std::vector<TestOutcome>> {};
                for (auto const c: counts)
                {
                    auto row = std::vector<TestOutcome>(static_cast<std::size_t>(t), TestOutcome::fail);
                    std::fill_n(row.begin(), c, TestOutcome::pass);
                    rows.push_back(row);
                }
                check_all_flags(from_rows(rows), counts);
                ++classes;
                auto i = std::size_t {0};
                while (i < counts.size() && counts[i] == t)
                    counts[i++] = 0;
                if (i == counts.size())
                    break;
                ++counts[i];
            }
        }
    }
    return {true,
            fmt::format("{} coverage_at_k cases; {} raw matrices and {} pass-count classes up to 5x5, "
                        "all correctness masks, within 1e-12",
                        coverage_cases,
                        raw,
                        classes)};
}

// 6

using RankKey = std::tuple<int, std::size_t, std::string>;

RankKey rank_key(const VoteMatrix& m, std::size_t i)
{
    return {-m.pass_counts[i], m.diff_lengths[i], m.candidate_ids[i]};
}

VoteMatrix random_matrix(std::mt19937_64& rng)
{
    auto const n = 1 + rng() % 8;
    auto const t = 1 + rng() % 8;
    auto ids = std::vector<std::string> {};
    for (int i = 0; i < 12; ++i)
        ids.push_back(fmt::format("id{:02}", i));
    std::shuffle(ids.begin(), ids.end(), rng);
    auto candidates = std::vector<CandidateSample> {};
    auto outcome = std::vector<std::vector<TestOutcome>>(n, std::vector<TestOutcome>(t));
    for (std::size_t i = 0; i < n; ++i)
    {
        auto c = CandidateSample {};
        c.candidate_id = ids[i];
        c.edit.unified_diff = std::string(1 + rng() % 3, 'x');
        candidates.push_back(c);
        for (auto& cell: outcome[i])
            cell = static_cast<TestOutcome>(rng() % 4);
    }
    return make_vote_matrix(candidates, outcome);
}

VoteMatrix rebuild(const std::vector<std::string>& ids,
                   const std::vector<std::size_t>& diffs,
                   const std::vector<std::vector<TestOutcome>>& outcome)
{
    auto candidates = std::vector<CandidateSample>(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
    {
        candidates[i].candidate_id = ids[i];
        candidates[i].edit.unified_diff = std::string(diffs[i], 'x');
    }
    return make_vote_matrix(candidates, outcome);
}

std::set<std::string> ids_of(const VoteMatrix& m, const std::vector<std::size_t>& picks)
{
    auto out = std::set<std::string> {};
    for (auto const p: picks)
        out.insert(m.candidate_ids[p]);
    return out;
}

Verdict selection_properties()
{
    constexpr int kTrials = 20'000;
    auto rng = std::mt19937_64(11);
    for (int trial = 0; trial < kTrials; ++trial)
    {
        auto const m = random_matrix(rng);
        auto const n = m.candidates();
        auto const where = fmt::format("matrix {}", trial);

        for (std::size_t i = 0; i < n; ++i)
        {
            auto const passes = std::count(m.outcome[i].begin(), m.outcome[i].end(), TestOutcome::pass);
            expect(m.pass_counts[i] == passes, where + ": pass count");
        }

        auto columns = std::vector<std::size_t>(m.tests());
        std::iota(columns.begin(), columns.end(), std::size_t {0});
        std::shuffle(columns.begin(), columns.end(), rng);
        auto shuffled_columns = m.outcome;
        for (std::size_t i = 0; i < n; ++i)
        {
            for (std::size_t j = 0; j < columns.size(); ++j)
                shuffled_columns[i][j] = m.outcome[i][columns[j]];
        }
        auto const by_column = rebuild(m.candidate_ids, m.diff_lengths, shuffled_columns);
        expect(by_column.pass_counts == m.pass_counts, where + ": column permutation changed pass counts");
        expect(majority_winner(by_column) == majority_winner(m), where + ": column permutation changed winner");

        auto rows = std::vector<std::size_t>(n);
        std::iota(rows.begin(), rows.end(), std::size_t {0});
        std::shuffle(rows.begin(), rows.end(), rng);
        auto ids = std::vector<std::string> {};
        auto diffs = std::vector<std::size_t> {};
        auto outcome = std::vector<std::vector<TestOutcome>> {};
        for (auto const r: rows)
        {
            ids.push_back(m.candidate_ids[r]);
            diffs.push_back(m.diff_lengths[r]);
            outcome.push_back(m.outcome[r]);
        }
        auto const by_row = rebuild(ids, diffs, outcome);
        expect(by_row.candidate_ids[majority_winner(by_row)] == m.candidate_ids[majority_winner(m)],
               where + ": candidate permutation changed the winner");
        expect(ids_of(by_row, top_k_filter(by_row, 3)) == ids_of(m, top_k_filter(m, 3)),
               where + ": candidate permutation changed the top 3");

        auto const winner = majority_winner(m);
        auto const top = top_k_filter(m, 3);
        expect(std::find(top.begin(), top.end(), winner) != top.end(), where + ": winner outside the top 3");

        auto const full = top_k_filter(m, n);
        expect(full.size() == n, where + ": full filter size");
        for (std::size_t i = 0; i + 1 < full.size(); ++i)
            expect(rank_key(m, full[i]) < rank_key(m, full[i + 1]), where + ": tie-break chain order");
        auto best = std::size_t {0};
        for (std::size_t i = 1; i < n; ++i)
        {
            if (rank_key(m, i) < rank_key(m, best))
                best = i;
        }
        expect(winner == best, where + ": winner is not the tie-break minimum");
    }
    return {true,
            fmt::format("{} random matrices: column and candidate permutation invariance, top-3 containment, "
                        "pass count > diff length > id chain",
                        kTrials)};
}

// 7

std::vector<RankedFile> ranking_from(const json& order)
{
    auto out = std::vector<RankedFile> {};
    for (auto const& f: order)
        out.push_back({f.at("file_path").get<std::string>(),
                       f.at("average_rank").get<double>(),
                       f.at("token_count").get<std::int64_t>()});
    return out;
}

void check_cap_sweep(const std::vector<RankedFile>& ranking,
                     const std::vector<std::string>& gold,
                     const std::vector<std::int64_t>& caps,
                     const std::string& where)
{
    bool previous = false;
    for (auto const cap: caps)
    {
        auto const ctx = assemble_context(ranking, cap);
        expect(ctx.total_included_tokens <= cap, fmt::format("{}: cap {} exceeded", where, cap));
        expect(ctx.included_files.size() <= ranking.size(), where + ": too many files");
        for (std::size_t i = 0; i < ctx.included_files.size(); ++i)
            expect(ctx.included_files[i] == ranking[i].file_path, fmt::format("{}: not a rank prefix at cap {}", where, cap));
        if (ctx.included_files.size() < ranking.size())
            expect(ctx.total_included_tokens + ranking[ctx.included_files.size()].token_count > cap,
                   fmt::format("{}: stopped early at cap {}", where, cap));
        auto const recall = compute_recall(ctx, gold);
        expect(recall || !previous, fmt::format("{}: recall dropped at cap {}", where, cap));
        previous = recall;
    }
}

Verdict context_properties(const fs::path& store)
{
    auto const file = [](std::string path) {
        auto v = RelevanceVerdict {};
        v.file_path = std::move(path);
        v.relevant = true;
        v.file_token_count = 100;
        return v;
    };
    auto const order = aggregate_rankings({file("A"), file("B"), file("C")},
                                          {{"A", "B", "C"}, {"B", "A", "C"}, {"A", "C", "B"}});
    expect(order.size() == 3, "mean-rank size");
    expect(order[0].file_path == "A" && order[1].file_path == "B" && order[2].file_path == "C", "mean-rank order");
    expect(std::abs(order[0].average_rank - 4.0 / 3.0) < 1e-12, "mean rank of A");
    expect(std::abs(order[1].average_rank - 2.0) < 1e-12, "mean rank of B");
    expect(std::abs(order[2].average_rank - 8.0 / 3.0) < 1e-12, "mean rank of C");
    auto const omitted = aggregate_rankings({file("A"), file("B")}, {{"A", "B"}, {"B"}});
    expect(std::abs(omitted[0].average_rank - 1.5) < 1e-12 && std::abs(omitted[1].average_rank - 1.5) < 1e-12,
           "omitted-file rank");

    auto const run_dir = store / "fixture";
    int fixtures = 0;
    for (auto const& instance: load_dataset(testing::fixture_corpus() / "instances"))
    {
        auto const ranking =
            ranking_from(payload(run_dir / "instances" / instance.instance_id / "context" / "ranking.json").at("order"));
        auto total = std::int64_t {0};
        for (auto const& r: ranking)
            total += r.token_count;
        auto caps = std::vector<std::int64_t> {};
        for (std::int64_t cap = 0; cap <= total + 1; ++cap)
            caps.push_back(cap);
        caps.push_back(128'000);
        check_cap_sweep(ranking, *instance.gold_edit_files, caps, instance.instance_id);
        expect(compute_recall(assemble_context(ranking, 128'000), *instance.gold_edit_files),
               instance.instance_id + ": gold file missing at the default cap");
        ++fixtures;
    }

    constexpr int kTrials = 2000;
    auto rng = std::mt19937_64(5);
    for (int trial = 0; trial < kTrials; ++trial)
    {
        auto ranking = std::vector<RankedFile> {};
        auto const count = 1 + static_cast<int>(rng() % 12);
        for (int f = 0; f < count; ++f)
            ranking.push_back({fmt::format("f{}", f), f + 1.0, static_cast<std::int64_t>(rng() % 50'000)});
        auto caps = std::vector<std::int64_t> {};
        for (std::int64_t cap = 0; cap <= 400'000; cap += 10'000)
            caps.push_back(cap);
        check_cap_sweep(ranking, {ranking[rng() % ranking.size()].file_path}, caps, fmt::format("ranking {}", trial));
    }
    return {true,
            fmt::format("mean ranks 4/3, 2, 8/3; cap, rank prefix and monotone recall on {} fixtures "
                        "(every cap) and {} random rankings",
                        fixtures,
                        kTrials)};
}

// 8

Verdict determinism(const fs::path& reference_store, const fs::path& scratch)
{
    auto const second = scratch / "fresh";
    expect(run_cli(run_args(second), scratch / "fresh.log") == 0, "second fresh run failed");
    if (auto const diff = tree_difference(reference_store, second))
        throw Failure("fresh runs differ: " + *diff);

    auto const resumed = scratch / "resumed";
    auto const first_abort = run_cli(run_args(resumed, "--abort-after-calls 40"), scratch / "abort1.log");
    expect(first_abort == 86, fmt::format("first interrupted run exited {}", first_abort));
    auto const second_abort = run_cli(run_args(resumed, "--abort-after-calls 150"), scratch / "abort2.log");
    expect(second_abort == 86, fmt::format("second interrupted run exited {}", second_abort));
    expect(run_cli(run_args(resumed), scratch / "resume.log") == 0, "resumed run failed");
    if (auto const diff = tree_difference(reference_store, resumed))
        throw Failure("resumed run differs: " + *diff);

    auto files = 0;
    for (auto const& entry: fs::recursive_directory_iterator(reference_store))
        files += entry.is_regular_file() ? 1 : 0;
    return {true,
            fmt::format("two fresh runs and a run interrupted twice then resumed are byte-identical ({} files)", files)};
}

// 9

Edit blocks_edit(std::vector<SearchReplaceBlock> blocks)
{
    auto edit = Edit {};
    edit.blocks = std::move(blocks);
    return edit;
}

Verdict sandbox_contracts(const fs::path& scratch)
{
    auto const instance =
        testing::make_instance(scratch, {{"a.py", "x = 1\n"}, {"b.py", "y = 2\ny = 2\n"}, {"c.py", "z = 3\n"}});
    auto const sandbox = testing::make_sandbox(scratch / "ws", 30.0);

    auto timed = std::async(std::launch::async, [&] {
        auto const ws = sandbox.materialize(instance);
        auto const start = Clock::now();
        auto const r = sandbox.run_script(ws, {"import time\ntime.sleep(1000)\n"}, 100.0);
        return std::pair {r, seconds_since(start)};
    });

    auto ws = sandbox.materialize(instance);
    auto const before = tree_digest(ws.root());
    for (auto blocks: std::vector<std::vector<SearchReplaceBlock>> {
             {{"a.py", "x = 1", "x = 10"}, {"c.py", "absent", "w"}},
             {{"a.py", "x = 1", "x = 10"}, {"b.py", "y = 2", "y = 20"}},
             {{"a.py", "x = 1", "x = 10"}, {"missing.py", "q", "r"}},
         })
    {
        auto edit = blocks_edit(blocks);
        auto const failed = sandbox.apply_edit(ws, edit);
        expect(!failed.ok(), "bad edit applied");
        expect(tree_digest(ws.root()) == before, "workspace changed after a failed edit");
    }

    auto ambiguous = blocks_edit({{"b.py", "y = 2", "y = 20"}});
    auto const twice = sandbox.apply_edit(ws, ambiguous);
    expect(!twice.ok() && twice.error->kind == EditErrorKind::ambiguous_match && twice.error->match_count == 2,
           "two occurrences not reported as ambiguous");
    auto absent = blocks_edit({{"c.py", "z = 4", "z = 5"}});
    auto const none = sandbox.apply_edit(ws, absent);
    expect(!none.ok() && none.error->kind == EditErrorKind::no_match && none.error->match_count == 0,
           "missing search not reported as no_match");
    auto once = blocks_edit({{"a.py", "x = 1", "x = 10"}, {"c.py", "z = 3", "z = 30"}});
    expect(sandbox.apply_edit(ws, once).ok(), "single matches rejected");
    expect(testing::read_file(ws.root() / "a.py") == "x = 10\n", "a.py not rewritten");
    expect(testing::read_file(ws.root() / "c.py") == "z = 30\n", "c.py not rewritten");
    expect(testing::read_file(ws.root() / "b.py") == "y = 2\ny = 2\n", "b.py touched");

    auto const plain = sandbox.materialize(instance);
    for (auto const& [code, outcome]: {std::pair {0, TestOutcome::pass},
                                      std::pair {2, TestOutcome::fail},
                                      std::pair {1, TestOutcome::error},
                                      std::pair {3, TestOutcome::error},
                                      std::pair {137, TestOutcome::error}})
    {
        auto const r = sandbox.run_script(plain, testing::exit_script(code));
        expect(r.exit_code == code && !r.timed_out, fmt::format("exit {} not surfaced", code));
        expect(classify(r) == outcome, fmt::format("exit {} classified as {}", code, to_string(classify(r))));
    }

    auto const [slow, wall] = timed.get();
    expect(slow.timed_out && !slow.exit_code.has_value(), "sleeping script not reported as timed out");
    expect(classify(slow) == TestOutcome::timeout, "timeout not classified as timeout");
    expect(wall >= 100.0 && wall <= 102.0, fmt::format("100 s timeout returned after {:.2f} s", wall));
    return {true,
            fmt::format("failed edits leave the digest unchanged; 1 match applies, 0 and 2 rejected; "
                        "exits 0/2/1/3/137 -> pass/fail/error/error/error; 100 s timeout killed after {:.2f} s",
                        wall)};
}

Verdict guarded(const std::function<Verdict()>& body)
{
    try
    {
        return body();
    }
    catch (const std::exception& e)
    {
        return {false, e.what()};
    }
}

} // namespace

int main()
{
    auto scratch = testing::TempDir {};
    auto const reference = scratch / "reference";
    auto failures = 0;
    auto const report = [&](int number, std::string_view name, const Verdict& v) {
        std::cout << fmt::format("{} {}. {}: {}\n", v.pass ? "PASS" : "FAIL", number, name, v.detail) << std::flush;
        failures += v.pass ? 0 : 1;
    };

    report(1, "cost table", guarded(cost_table));
    report(2, "local compute cost", guarded(local_cost));

    auto const fixture = guarded([&] { return fixture_run(reference); });
    auto const substitutes = std::vector<std::pair<int, Verdict>> {
        {5, guarded(estimator_oracles)},
        {6, guarded(selection_properties)},
        {7, guarded([&] { return context_properties(reference); })},
        {8, guarded([&] { return determinism(reference, scratch.path()); })},
    };
    auto substitutes_pass = fixture.pass;
    for (auto const& [n, v]: substitutes)
        substitutes_pass = substitutes_pass && v.pass;
    std::cout << fmt::format("SKIP 3. headline scores: not reproducible at desk scale (needs a frontier model and the "
                             "full benchmark harness); substitute criteria 4-8 {}\n",
                             substitutes_pass ? "all pass" : "do not all pass");
    report(4, "end-to-end fixture run", fixture);
    report(5, "estimator oracles", substitutes[0].second);
    report(6, "selection properties", substitutes[1].second);
    report(7, "context properties", substitutes[2].second);
    report(8, "determinism and resumption", substitutes[3].second);
    report(9, "sandbox contracts", guarded([&] { return sandbox_contracts(scratch / "sandbox"); }));

    std::cout << fmt::format("{} criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
