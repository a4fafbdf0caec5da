// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>
#include <scaleswe/llm.hpp>
#include <scaleswe/prompts.hpp>
#include <scaleswe/tokens.hpp>

#include <optional>
#include <string>
#include <vector>

namespace scaleswe
{

struct ContextConfig
{
    int repetitions = 3;
    std::int64_t target_tokens = 60'000;
    std::int64_t cap = 128'000;
    /// Files above this many counted tokens are scanned in chunks.
    std::int64_t chunk_tokens = 32'000;
    double scan_temperature = 0.0;
    double rank_temperature = 0.0;
    int max_output_tokens = 2048;
    int workers = 8;
};

void to_json(json& j, const ContextConfig& v);
void from_json(const json& j, ContextConfig& v);

struct RelevanceVerdict
{
    std::string file_path;
    bool relevant = false;
    /// Nonempty iff relevant.
    std::string summary;
    std::int64_t file_token_count = 0;
    /// Set when the scan failed and the file was kept to protect recall.
    bool scan_error = false;
    TokenUsage usage;

    bool operator==(const RelevanceVerdict&) const = default;
};

struct SkippedFile
{
    std::string file_path;
    std::string reason;

    bool operator==(const SkippedFile&) const = default;
};

struct RelevanceScan
{
    std::vector<RelevanceVerdict> verdicts; // path order
    std::vector<SkippedFile> skipped;
    std::int64_t total_scanned_tokens = 0;

    [[nodiscard]] TokenUsage usage() const;
};

struct RankedFile
{
    std::string file_path;
    double average_rank = 0.0;
    std::int64_t token_count = 0;

    bool operator==(const RankedFile&) const = default;
};

struct Ranking
{
    std::vector<RankedFile> order;
    /// Parsed file lists, one per valid repetition.
    std::vector<std::vector<std::string>> repetitions;
    int dropped_repetitions = 0;
    TokenUsage usage;
};

struct RankedContext
{
    std::vector<RankedFile> ranked;
    /// Always a prefix of `ranked`.
    std::vector<std::string> included_files;
    std::int64_t total_included_tokens = 0;
    std::int64_t total_scanned_tokens = 0;
    std::int64_t cap = 0;
    /// True when nothing fit under the cap.
    bool empty_flagged = false;
};

class RankingError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Snapshot files passing the instance filter, sorted by path.
[[nodiscard]] std::vector<std::string> list_source_files(const Instance& instance);

/// Interprets a relevance reply. Returns nullopt when neither verdict is stated.
struct RelevanceReply
{
    bool relevant = false;
    std::string summary;
};
[[nodiscard]] std::optional<RelevanceReply> parse_relevance_reply(std::string_view reply);

/// One backend call per file (or per chunk of an oversized file); a file is
/// relevant if any chunk is. Calls fan out over `config.workers` threads.
[[nodiscard]] RelevanceScan scan_relevance(const Instance& instance,
                                           ChatBackend& backend,
                                           const TokenCounter& counter,
                                           const PromptLibrary& prompts,
                                           const ContextConfig& config = {});

/// Parses a ranking reply into known paths (unknown and repeated paths are
/// dropped). Returns nullopt when no known path is listed.
[[nodiscard]] std::optional<std::vector<std::string>> parse_ranking_reply(std::string_view reply,
                                                                         const std::vector<std::string>& known);

/// Mean-rank aggregation. A file missing from a repetition gets rank
/// (listed count + 1) there; ties sort by path.
[[nodiscard]] std::vector<RankedFile> aggregate_rankings(const std::vector<RelevanceVerdict>& relevant,
                                                         const std::vector<std::vector<std::string>>& repetitions);

/// Prompts `config.repetitions` rankings of the relevant files and
/// aggregates them. Throws RankingError if no repetition parses.
[[nodiscard]] Ranking rank_files(const Instance& instance,
                                 const std::vector<RelevanceVerdict>& verdicts,
                                 ChatBackend& backend,
                                 const PromptLibrary& prompts,
                                 const ContextConfig& config = {});

/// Includes whole files in rank order until the next one would exceed the cap.
[[nodiscard]] RankedContext assemble_context(const std::vector<RankedFile>& ranking,
                                             std::int64_t cap = 128'000,
                                             std::int64_t total_scanned_tokens = 0);

/// True iff every gold file is included.
[[nodiscard]] bool compute_recall(const RankedContext& context, const std::vector<std::string>& gold_files);

struct DatasetRecall
{
    double fraction = 0.0;
    int counted = 0;
    /// Instances without gold files.
    int excluded = 0;
};

[[nodiscard]] DatasetRecall dataset_recall(const std::vector<std::optional<bool>>& per_instance);

/// scanned / included tokens; absent when nothing was included.
[[nodiscard]] std::optional<double> compression_factor(const RankedContext& context);

/// Concatenated `<file path=...>` sections for prompts.
[[nodiscard]] std::string render_context_files(const fs::path& snapshot, const std::vector<std::string>& files);

void to_json(json& j, const RelevanceVerdict& v);
void from_json(const json& j, RelevanceVerdict& v);
void to_json(json& j, const SkippedFile& v);
void from_json(const json& j, SkippedFile& v);
void to_json(json& j, const RankedFile& v);
void from_json(const json& j, RankedFile& v);
void to_json(json& j, const RelevanceScan& v);
void from_json(const json& j, RelevanceScan& v);
void to_json(json& j, const Ranking& v);
void from_json(const json& j, Ranking& v);
void to_json(json& j, const RankedContext& v);
void from_json(const json& j, RankedContext& v);

} // namespace scaleswe
