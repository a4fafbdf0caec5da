// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>

#include <array>
#include <atomic>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace scaleswe
{

/// Money in integer pico-dollars. One token at a whole number of
/// micro-dollars per million tokens is an exact integer in this unit.
using Picodollars = std::int64_t;

inline constexpr Picodollars kPicoPerDollar = 1'000'000'000'000;

[[nodiscard]] Picodollars dollars_to_pico(double usd);
[[nodiscard]] double pico_to_dollars(Picodollars pico);

struct PriceTable
{
    double input_per_million = 3.0;
    double output_per_million = 15.0;
    double cache_read_per_million = 0.3;
    double cache_write_per_million = 3.75;

    void validate() const;

    bool operator==(const PriceTable&) const = default;
};

void to_json(json& j, const PriceTable& v);
void from_json(const json& j, PriceTable& v);

enum class CostClass
{
    input,
    output,
    cache_read,
    cache_write,
    local,
};

inline constexpr std::size_t kCostClassCount = 5;

/// Cost of one usage in pico-dollars per class (local is always zero).
[[nodiscard]] std::array<Picodollars, kCostClassCount> usage_cost_by_class(const TokenUsage& usage,
                                                                          const PriceTable& prices);
[[nodiscard]] Picodollars usage_cost_pico(const TokenUsage& usage, const PriceTable& prices);
/// usd = sum over classes of count / 1e6 * price.
[[nodiscard]] double usage_cost(const TokenUsage& usage, const PriceTable& prices);

enum class Stage
{
    relevance,
    ranking,
    gen_tests,
    gen_edits,
    selection,
    other,
};

inline constexpr std::size_t kStageCount = 6;

[[nodiscard]] std::string_view to_string(Stage stage);
[[nodiscard]] Stage stage_from_string(std::string_view name);

struct LedgerRow
{
    Stage stage = Stage::other;
    std::array<Picodollars, kCostClassCount> by_class {};
    TokenUsage tokens;
    Picodollars total = 0;
    double percent = 0.0;
};

struct LedgerTable
{
    std::vector<LedgerRow> rows; // fixed stage order, only stages with entries
    LedgerRow total;
    /// Fixed-width text table with two-decimal dollars and one-decimal percents.
    [[nodiscard]] std::string to_text() const;
    [[nodiscard]] std::string to_csv() const;
    [[nodiscard]] json to_json() const;
};

/// Append-only, thread-safe accumulator of per-stage costs.
class CostLedger
{
  public:
    explicit CostLedger(PriceTable prices = {});

    CostLedger(const CostLedger&) = delete;
    CostLedger& operator=(const CostLedger&) = delete;

    void add_usage(Stage stage, const TokenUsage& usage);
    void add_amount(Stage stage, CostClass cost_class, Picodollars amount);

    [[nodiscard]] const PriceTable& prices() const { return _prices; }
    [[nodiscard]] bool empty() const;
    [[nodiscard]] LedgerTable snapshot() const;

  private:
    struct StageCell
    {
        std::array<std::atomic<Picodollars>, kCostClassCount> money {};
        std::array<std::atomic<std::int64_t>, 4> tokens {};
        std::atomic<bool> touched {false};
    };

    PriceTable _prices;
    std::array<StageCell, kStageCount> _cells;
};

/// Rows in fixed order (relevance, ranking, gen_tests, gen_edits, selection,
/// other) plus a total; percent = stage total / grand total.
[[nodiscard]] LedgerTable render_ledger(const CostLedger& ledger);

struct LocalComputeSpec
{
    int device_count = 8;
    double peak_tflops_per_device = 362.05;
    double utilization = 0.2;
    double model_params = 32e9;
    double total_tokens = 0;
    double usd_per_hour = 8.24;

    void validate() const;

    bool operator==(const LocalComputeSpec&) const = default;
};

void to_json(json& j, const LocalComputeSpec& v);
void from_json(const json& j, LocalComputeSpec& v);

struct LocalCostEstimate
{
    double tokens_per_second = 0;
    double hours = 0;
    double usd = 0;
};

/// Throughput from peak FLOPs at the given utilization with 2 FLOPs per
/// parameter per token; wall time and rental cost follow.
[[nodiscard]] LocalCostEstimate estimate_local_cost(const LocalComputeSpec& spec);

} // namespace scaleswe
