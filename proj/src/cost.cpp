// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/cost.hpp>

#include <fmt/format.h>

#include <cmath>

namespace scaleswe
{

namespace
{

std::int64_t micro_per_million(double price)
{
    return static_cast<std::int64_t>(std::llround(price * 1e6));
}

constexpr std::array<Stage, kStageCount> kStageOrder {
    Stage::relevance, Stage::ranking, Stage::gen_tests, Stage::gen_edits, Stage::selection, Stage::other};

std::string money(Picodollars pico)
{
    // Half-cent rounding happens only here.
    auto const cents = (pico >= 0 ? pico + kPicoPerDollar / 200 : pico - kPicoPerDollar / 200) / (kPicoPerDollar / 100);
    return fmt::format("{}{}.{:02}", cents < 0 ? "-" : "", std::abs(cents) / 100, std::abs(cents) % 100);
}

std::string_view stage_label(Stage stage)
{
    switch (stage)
    {
        case Stage::relevance: return "Relevance";
        case Stage::ranking: return "Ranking";
        case Stage::gen_tests: return "Gen. tests";
        case Stage::gen_edits: return "Gen. edits";
        case Stage::selection: return "Selection";
        case Stage::other: return "Other";
    }
    return "?";
}

} // namespace

Picodollars dollars_to_pico(double usd)
{
    return static_cast<Picodollars>(std::llround(usd * 1e12));
}

double pico_to_dollars(Picodollars pico)
{
    return static_cast<double>(pico) / 1e12;
}

void PriceTable::validate() const
{
    if (input_per_million < 0 || output_per_million < 0 || cache_read_per_million < 0 || cache_write_per_million < 0)
        throw ContractError("prices must be nonnegative");
}

void to_json(json& j, const PriceTable& v)
{
    j = json {{"input", v.input_per_million},
              {"output", v.output_per_million},
              {"cache_read", v.cache_read_per_million},
              {"cache_write", v.cache_write_per_million}};
}

void from_json(const json& j, PriceTable& v)
{
    auto const defaults = PriceTable {};
    v.input_per_million = j.value("input", defaults.input_per_million);
    v.output_per_million = j.value("output", defaults.output_per_million);
    v.cache_read_per_million = j.value("cache_read", defaults.cache_read_per_million);
    v.cache_write_per_million = j.value("cache_write", defaults.cache_write_per_million);
    v.validate();
}

std::array<Picodollars, kCostClassCount> usage_cost_by_class(const TokenUsage& usage, const PriceTable& prices)
{
    return {
        usage.input_tokens * micro_per_million(prices.input_per_million),
        usage.output_tokens * micro_per_million(prices.output_per_million),
        usage.cache_read_tokens * micro_per_million(prices.cache_read_per_million),
        usage.cache_write_tokens * micro_per_million(prices.cache_write_per_million),
        0,
    };
}

Picodollars usage_cost_pico(const TokenUsage& usage, const PriceTable& prices)
{
    Picodollars total = 0;
    for (auto const amount: usage_cost_by_class(usage, prices))
        total += amount;
    return total;
}

double usage_cost(const TokenUsage& usage, const PriceTable& prices)
{
    return pico_to_dollars(usage_cost_pico(usage, prices));
}

std::string_view to_string(Stage stage)
{
    switch (stage)
    {
        case Stage::relevance: return "relevance";
        case Stage::ranking: return "ranking";
        case Stage::gen_tests: return "gen_tests";
        case Stage::gen_edits: return "gen_edits";
        case Stage::selection: return "selection";
        case Stage::other: return "other";
    }
    return "other";
}

Stage stage_from_string(std::string_view name)
{
    for (auto const stage: kStageOrder)
    {
        if (to_string(stage) == name)
            return stage;
    }
    throw ContractError(fmt::format("unknown ledger stage '{}'", name));
}

CostLedger::CostLedger(PriceTable prices): _prices(prices)
{
    _prices.validate();
}

void CostLedger::add_usage(Stage stage, const TokenUsage& usage)
{
    if (!usage.nonnegative())
        throw ContractError("token usage counts must be nonnegative");
    auto& cell = _cells[static_cast<std::size_t>(stage)];
    auto const amounts = usage_cost_by_class(usage, _prices);
    for (std::size_t k = 0; k < 4; ++k)
        cell.money[k].fetch_add(amounts[k], std::memory_order_relaxed);
    cell.tokens[0].fetch_add(usage.input_tokens, std::memory_order_relaxed);
    cell.tokens[1].fetch_add(usage.output_tokens, std::memory_order_relaxed);
    cell.tokens[2].fetch_add(usage.cache_read_tokens, std::memory_order_relaxed);
    cell.tokens[3].fetch_add(usage.cache_write_tokens, std::memory_order_relaxed);
    cell.touched.store(true, std::memory_order_release);
}

void CostLedger::add_amount(Stage stage, CostClass cost_class, Picodollars amount)
{
    auto& cell = _cells[static_cast<std::size_t>(stage)];
    cell.money[static_cast<std::size_t>(cost_class)].fetch_add(amount, std::memory_order_relaxed);
    cell.touched.store(true, std::memory_order_release);
}

bool CostLedger::empty() const
{
    for (auto const& cell: _cells)
    {
        if (cell.touched.load(std::memory_order_acquire))
            return false;
    }
    return true;
}

LedgerTable CostLedger::snapshot() const
{
    auto table = LedgerTable {};
    table.total.stage = Stage::other;
    for (auto const stage: kStageOrder)
    {
        auto const& cell = _cells[static_cast<std::size_t>(stage)];
        if (!cell.touched.load(std::memory_order_acquire))
            continue;
        auto row = LedgerRow {};
        row.stage = stage;
        for (std::size_t k = 0; k < kCostClassCount; ++k)
        {
            row.by_class[k] = cell.money[k].load(std::memory_order_relaxed);
            row.total += row.by_class[k];
            table.total.by_class[k] += row.by_class[k];
        }
        row.tokens.input_tokens = cell.tokens[0].load(std::memory_order_relaxed);
        row.tokens.output_tokens = cell.tokens[1].load(std::memory_order_relaxed);
        row.tokens.cache_read_tokens = cell.tokens[2].load(std::memory_order_relaxed);
        row.tokens.cache_write_tokens = cell.tokens[3].load(std::memory_order_relaxed);
        table.total.tokens += row.tokens;
        table.total.total += row.total;
        table.rows.push_back(row);
    }
    for (auto& row: table.rows)
    {
        row.percent = table.total.total == 0
                          ? 0.0
                          : 100.0 * static_cast<double>(row.total) / static_cast<double>(table.total.total);
    }
    table.total.percent = 100.0;
    return table;
}

LedgerTable render_ledger(const CostLedger& ledger)
{
    if (ledger.empty())
        throw ContractError("cannot render an empty cost ledger");
    return ledger.snapshot();
}

std::string LedgerTable::to_text() const
{
    auto out = fmt::format("{:<12}{:>12}{:>12}{:>12}{:>12}{:>12}{:>20}\n",
                           "Stage",
                           "Input",
                           "Output",
                           "CacheRead",
                           "CacheWrite",
                           "Local",
                           "USD (%)");
    auto line = [&](std::string_view label, const LedgerRow& row) {
        out += fmt::format("{:<12}{:>12}{:>12}{:>12}{:>12}{:>12}{:>20}\n",
                           label,
                           money(row.by_class[0]),
                           money(row.by_class[1]),
                           money(row.by_class[2]),
                           money(row.by_class[3]),
                           money(row.by_class[4]),
                           fmt::format("{} ({:.1f}%)", money(row.total), row.percent));
    };
    for (auto const& row: rows)
        line(stage_label(row.stage), row);
    line("Total", total);
    return out;
}

std::string LedgerTable::to_csv() const
{
    auto out = std::string("stage,input_usd,output_usd,cache_read_usd,cache_write_usd,local_usd,total_usd,percent\n");
    auto line = [&](std::string_view label, const LedgerRow& row) {
        out += fmt::format("{},{},{},{},{},{},{},{:.1f}\n",
                           label,
                           money(row.by_class[0]),
                           money(row.by_class[1]),
                           money(row.by_class[2]),
                           money(row.by_class[3]),
                           money(row.by_class[4]),
                           money(row.total),
                           row.percent);
    };
    for (auto const& row: rows)
        line(to_string(row.stage), row);
    line("total", total);
    return out;
}

json LedgerTable::to_json() const
{
    auto row_json = [](const LedgerRow& row) {
        return json {{"input_pico", row.by_class[0]},
                     {"output_pico", row.by_class[1]},
                     {"cache_read_pico", row.by_class[2]},
                     {"cache_write_pico", row.by_class[3]},
                     {"local_pico", row.by_class[4]},
                     {"total_pico", row.total},
                     {"total_usd", money(row.total)},
                     {"percent", fmt::format("{:.1f}", row.percent)},
                     {"tokens", row.tokens}};
    };
    auto j = json::object();
    auto stages = json::array();
    for (auto const& row: rows)
    {
        auto r = row_json(row);
        r["stage"] = std::string(scaleswe::to_string(row.stage));
        stages.push_back(std::move(r));
    }
    j["stages"] = std::move(stages);
    j["total"] = row_json(total);
    return j;
}

void LocalComputeSpec::validate() const
{
    if (device_count <= 0 || peak_tflops_per_device <= 0 || utilization <= 0 || model_params <= 0 || usd_per_hour <= 0)
        throw ContractError("local compute fields must be positive");
    if (utilization > 1.0)
        throw ContractError("utilization must lie in (0, 1]");
    if (total_tokens < 0)
        throw ContractError("total_tokens must be nonnegative");
}

void to_json(json& j, const LocalComputeSpec& v)
{
    j = json {{"device_count", v.device_count},
              {"peak_tflops_per_device", v.peak_tflops_per_device},
              {"utilization", v.utilization},
              {"model_params", v.model_params},
              {"usd_per_hour", v.usd_per_hour}};
}

void from_json(const json& j, LocalComputeSpec& v)
{
    auto const d = LocalComputeSpec {};
    v.device_count = j.value("device_count", d.device_count);
    v.peak_tflops_per_device = j.value("peak_tflops_per_device", d.peak_tflops_per_device);
    v.utilization = j.value("utilization", d.utilization);
    v.model_params = j.value("model_params", d.model_params);
    v.usd_per_hour = j.value("usd_per_hour", d.usd_per_hour);
    v.total_tokens = j.value("total_tokens", 0.0);
}

LocalCostEstimate estimate_local_cost(const LocalComputeSpec& spec)
{
    spec.validate();
    auto const flops_per_second = spec.utilization * spec.device_count * spec.peak_tflops_per_device * 1e12;
    auto const flops_per_token = 2.0 * spec.model_params;
    auto estimate = LocalCostEstimate {};
    estimate.tokens_per_second = flops_per_second / flops_per_token;
    estimate.hours = spec.total_tokens / estimate.tokens_per_second / 3600.0;
    estimate.usd = estimate.hours * spec.usd_per_hour;
    return estimate;
}

} // namespace scaleswe
