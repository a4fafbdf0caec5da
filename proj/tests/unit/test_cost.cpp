// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/cost.hpp>

#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

using namespace scaleswe;

TEST_CASE("usage cost from the published price list")
{
    auto const prices = PriceTable {};
    auto usage = TokenUsage {};
    usage.output_tokens = 1'000'000;
    CHECK(usage_cost(usage, prices) == doctest::Approx(15.00));

    CHECK(usage_cost(TokenUsage {}, prices) == 0.0);

    usage = TokenUsage {};
    usage.input_tokens = 2'000'000;
    usage.cache_read_tokens = 1'000'000;
    // 2 * 3 + 1 * 0.3
    CHECK(usage_cost(usage, prices) == doctest::Approx(6.30));
}

TEST_CASE("pico-dollar conversions are exact for whole micro-dollar rates")
{
    auto const prices = PriceTable {};
    auto usage = TokenUsage {};
    usage.cache_write_tokens = 1;
    // 3.75 $/M tokens = 3.75 micro-dollars per token.
    CHECK(usage_cost_pico(usage, prices) == 3'750'000);
    CHECK(dollars_to_pico(1.0) == kPicoPerDollar);
    CHECK(pico_to_dollars(dollars_to_pico(2291.90)) == doctest::Approx(2291.90));
}

TEST_CASE("usage cost matches an independent recomputation on random usages")
{
    auto rng = std::mt19937_64(11);
    auto dist = std::uniform_int_distribution<std::int64_t>(0, 5'000'000);
    auto const prices = PriceTable {};
    for (int trial = 0; trial < 1000; ++trial)
    {
        auto const u = TokenUsage {dist(rng), dist(rng), dist(rng), dist(rng)};
        auto const expected = (u.input_tokens * 3.0 + u.output_tokens * 15.0 + u.cache_read_tokens * 0.3 +
                               u.cache_write_tokens * 3.75) /
                              1e6;
        CHECK(usage_cost(u, prices) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("ledger reproduces the published cost table")
{
    auto ledger = CostLedger {};
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
    for (auto const& r: rows)
    {
        ledger.add_amount(r.stage, CostClass::input, dollars_to_pico(r.input));
        ledger.add_amount(r.stage, CostClass::output, dollars_to_pico(r.output));
        ledger.add_amount(r.stage, CostClass::cache_read, dollars_to_pico(r.cache_read));
        ledger.add_amount(r.stage, CostClass::cache_write, dollars_to_pico(r.cache_write));
        ledger.add_amount(r.stage, CostClass::local, dollars_to_pico(r.local));
    }
    auto const table = render_ledger(ledger);
    CHECK(pico_to_dollars(table.total.total) == doctest::Approx(2291.90).epsilon(1e-9));
    auto const column = [&](CostClass c) {
        return pico_to_dollars(table.total.by_class[static_cast<std::size_t>(c)]);
    };
    CHECK(column(CostClass::input) == doctest::Approx(25.79));
    CHECK(column(CostClass::output) == doctest::Approx(712.14));
    CHECK(column(CostClass::cache_read) == doctest::Approx(674.69));
    CHECK(column(CostClass::cache_write) == doctest::Approx(545.26));
    CHECK(column(CostClass::local) == doctest::Approx(334.02));

    auto const expected = std::vector<double> {14.6, 0.9, 19.2, 59.6, 5.8};
    REQUIRE(table.rows.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(std::abs(table.rows[i].percent - expected[i]) <= 0.05);
    auto const text = table.to_text();
    CHECK(text.find("2291.90 (100.0%)") != std::string::npos);
    CHECK(text.find("334.02 (14.6%)") != std::string::npos);
}

TEST_CASE("degenerate ledger with one zero-usage stage")
{
    auto ledger = CostLedger {};
    ledger.add_usage(Stage::ranking, TokenUsage {});
    auto const table = render_ledger(ledger);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.total.total == 0);
    CHECK(table.total.percent == doctest::Approx(100.0));
}

TEST_CASE("ledger accumulates concurrently without loss")
{
    auto ledger = CostLedger {};
    auto usage = TokenUsage {};
    usage.output_tokens = 1000;
    {
        auto threads = std::vector<std::jthread> {};
        for (int t = 0; t < 8; ++t)
            threads.emplace_back([&] {
                for (int i = 0; i < 1000; ++i)
                    ledger.add_usage(Stage::gen_edits, usage);
            });
    }
    auto const table = render_ledger(ledger);
    CHECK(table.total.tokens.output_tokens == 8'000'000);
    CHECK(pico_to_dollars(table.total.total) == doctest::Approx(120.0));
}

TEST_CASE("local compute estimate")
{
    auto spec = LocalComputeSpec {8, 362.05, 0.2, 32e9, 1.32084e9, 8.24};
    auto const est = estimate_local_cost(spec);
    CHECK(std::abs(est.tokens_per_second - 9051) <= 1.0);
    CHECK(std::abs(est.hours - 40.5) <= 0.1);
    CHECK(std::abs(est.usd - 334.02) <= 0.50);

    // 1 device * 2 TFLOPS at full utilization over 2 * 1e9 FLOPs per token.
    auto const simple = estimate_local_cost({1, 2.0, 1.0, 1e9, 0.0, 1.0});
    CHECK(simple.tokens_per_second == doctest::Approx(1000.0));
    CHECK(simple.hours == 0.0);
    CHECK(simple.usd == 0.0);

    spec.utilization = 0.0;
    CHECK_THROWS_AS((void)estimate_local_cost(spec), ContractError);
}

TEST_CASE("stage names round-trip")
{
    for (auto const s: {Stage::relevance, Stage::ranking, Stage::gen_tests, Stage::gen_edits, Stage::selection, Stage::other})
        CHECK(stage_from_string(to_string(s)) == s);
}
