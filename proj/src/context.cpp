// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/actions.hpp>
#include <scaleswe/context.hpp>
#include <scaleswe/parallel.hpp>
#include <scaleswe/sandbox.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

namespace scaleswe
{

void to_json(json& j, const ContextConfig& v)
{
    j = json {{"repetitions", v.repetitions},
              {"target_tokens", v.target_tokens},
              {"cap", v.cap},
              {"chunk_tokens", v.chunk_tokens},
              {"scan_temperature", v.scan_temperature},
              {"rank_temperature", v.rank_temperature},
              {"max_output_tokens", v.max_output_tokens},
              {"workers", v.workers}};
}

void from_json(const json& j, ContextConfig& v)
{
    auto const d = ContextConfig {};
    v.repetitions = j.value("repetitions", d.repetitions);
    v.target_tokens = j.value("target_tokens", d.target_tokens);
    v.cap = j.value("cap", d.cap);
    v.chunk_tokens = j.value("chunk_tokens", d.chunk_tokens);
    v.scan_temperature = j.value("scan_temperature", d.scan_temperature);
    v.rank_temperature = j.value("rank_temperature", d.rank_temperature);
    v.max_output_tokens = j.value("max_output_tokens", d.max_output_tokens);
    v.workers = j.value("workers", d.workers);
    if (v.repetitions < 1 || v.cap < 0 || v.chunk_tokens < 1)
        throw ContractError("context config: repetitions and chunk_tokens must be >= 1, cap >= 0");
}

TokenUsage RelevanceScan::usage() const
{
    auto total = TokenUsage {};
    for (auto const& v: verdicts)
        total += v.usage;
    return total;
}

std::vector<std::string> list_source_files(const Instance& instance)
{
    auto files = std::vector<std::string> {};
    std::error_code ec;
    auto it = fs::recursive_directory_iterator(instance.codebase_ref, fs::directory_options::skip_permission_denied, ec);
    if (ec)
        throw ContractError(fmt::format("{}: cannot read snapshot: {}", instance.instance_id, ec.message()));
    for (auto const& entry: it)
    {
        if (!entry.is_regular_file())
            continue;
        auto const relative = fs::relative(entry.path(), instance.codebase_ref);
        if (instance.source_file_filter.accepts(relative))
            files.push_back(relative.generic_string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

namespace
{

std::string first_word_upper(std::string_view line)
{
    auto word = std::string {};
    for (auto const c: line)
    {
        if (std::isalpha(static_cast<unsigned char>(c)) || c == ' ')
            word += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        else if (c == '*' || c == '#' || c == '`' || c == '_' || c == '-')
            continue;
        else
            break;
    }
    while (!word.empty() && word.front() == ' ')
        word.erase(word.begin());
    return word;
}

std::string trim_copy(std::string_view s)
{
    auto const begin = s.find_first_not_of(" \t\n");
    if (begin == std::string_view::npos)
        return {};
    auto const end = s.find_last_not_of(" \t\n");
    return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::string> split_into_chunks(const std::string& content, const TokenCounter& counter, std::int64_t budget)
{
    auto chunks = std::vector<std::string> {};
    auto current = std::string {};
    std::int64_t current_tokens = 0;
    std::size_t start = 0;
    while (start < content.size())
    {
        auto nl = content.find('\n', start);
        auto const end = nl == std::string::npos ? content.size() : nl + 1;
        auto line = std::string_view(content).substr(start, end - start);
        start = end;
        while (!line.empty())
        {
            auto const line_tokens = counter.count(line);
            if (current_tokens + line_tokens <= budget)
            {
                current.append(line);
                current_tokens += line_tokens;
                break;
            }
            if (!current.empty())
            {
                chunks.push_back(std::move(current));
                current.clear();
                current_tokens = 0;
                continue;
            }
            // A single line larger than the budget: cut it by bytes.
            auto take = line.size();
            while (take > 1 && counter.count(line.substr(0, take)) > budget)
                take /= 2;
            chunks.emplace_back(line.substr(0, take));
            line.remove_prefix(take);
        }
    }
    if (!current.empty() || chunks.empty())
        chunks.push_back(std::move(current));
    return chunks;
}

} // namespace

std::optional<RelevanceReply> parse_relevance_reply(std::string_view reply)
{
    auto const text = normalize_newlines(reply);
    auto const begin = text.find_first_not_of(" \t\n");
    if (begin == std::string::npos)
        return std::nullopt;
    auto const nl = text.find('\n', begin);
    auto const first_line = std::string_view(text).substr(begin, nl == std::string::npos ? std::string::npos : nl - begin);
    auto const word = first_word_upper(first_line);
    auto rest = nl == std::string::npos ? std::string {} : trim_copy(std::string_view(text).substr(nl + 1));

    if (word.starts_with("IRRELEVANT") || word.starts_with("NOT RELEVANT"))
        return RelevanceReply {false, {}};
    if (word.starts_with("RELEVANT"))
    {
        // Allow "RELEVANT: summary" on one line.
        auto const colon = first_line.find(':');
        if (rest.empty() && colon != std::string_view::npos)
            rest = trim_copy(first_line.substr(colon + 1));
        if (rest.empty())
            rest = "Flagged relevant without a summary.";
        return RelevanceReply {true, std::move(rest)};
    }
    return std::nullopt;
}

RelevanceScan scan_relevance(const Instance& instance,
                             ChatBackend& backend,
                             const TokenCounter& counter,
                             const PromptLibrary& prompts,
                             const ContextConfig& config)
{
    auto const files = list_source_files(instance);
    auto verdicts = std::vector<std::optional<RelevanceVerdict>>(files.size());
    auto skipped = std::vector<std::optional<SkippedFile>>(files.size());
    auto const system = prompts.render("relevance_system", {});

    parallel_for(files.size(), config.workers, [&](std::size_t index) {
        auto const& path = files[index];
        auto const content = read_normalized(instance.codebase_ref / path);
        if (!content)
        {
            skipped[index] = SkippedFile {path, "unreadable"};
            return;
        }
        auto verdict = RelevanceVerdict {};
        verdict.file_path = path;
        verdict.file_token_count = counter.count(*content);

        auto const chunks = verdict.file_token_count > config.chunk_tokens
                                ? split_into_chunks(*content, counter, config.chunk_tokens)
                                : std::vector<std::string> {*content};
        auto summaries = std::vector<std::string> {};
        for (std::size_t c = 0; c < chunks.size(); ++c)
        {
            auto const part_note =
                chunks.size() > 1 ? fmt::format(" part=\"{} of {}\"", c + 1, chunks.size()) : std::string {};
            auto request = ChatRequest {};
            request.messages = {
                {Role::system, system},
                {Role::user,
                 prompts.render("relevance_user",
                                {{"issue", instance.issue_text},
                                 {"file_path", path},
                                 {"part_note", part_note},
                                 {"file_contents", chunks[c]}})},
            };
            request.temperature = config.scan_temperature;
            request.max_output_tokens = config.max_output_tokens;
            request.session = fmt::format("{}/relevance/{}", instance.instance_id, path);
            request.sequence = static_cast<int>(c);
            try
            {
                auto const response = complete(request, backend);
                verdict.usage += response.usage;
                auto const parsed = parse_relevance_reply(response.text);
                if (!parsed)
                {
                    verdict.scan_error = true;
                    summaries.push_back(fmt::format("Relevance reply for part {} was unparseable; kept to protect recall.",
                                                    c + 1));
                }
                else if (parsed->relevant)
                {
                    summaries.push_back(parsed->summary);
                }
            }
            catch (const BackendError& e)
            {
                verdict.scan_error = true;
                summaries.push_back(fmt::format("Relevance scan failed ({}); kept to protect recall.", e.what()));
            }
        }
        verdict.relevant = !summaries.empty();
        for (std::size_t s = 0; s < summaries.size(); ++s)
        {
            if (s > 0)
                verdict.summary += "\n";
            verdict.summary += summaries[s];
        }
        verdicts[index] = std::move(verdict);
    });

    auto scan = RelevanceScan {};
    for (std::size_t i = 0; i < files.size(); ++i)
    {
        if (verdicts[i])
        {
            scan.total_scanned_tokens += verdicts[i]->file_token_count;
            scan.verdicts.push_back(std::move(*verdicts[i]));
        }
        if (skipped[i])
            scan.skipped.push_back(std::move(*skipped[i]));
    }
    return scan;
}

std::optional<std::vector<std::string>> parse_ranking_reply(std::string_view reply, const std::vector<std::string>& known)
{
    auto body = std::string {};
    bool fenced = false;
    for (auto const& block: fenced_blocks(reply))
    {
        if (block.tag == "ranking")
        {
            body = block.body;
            fenced = true;
            break;
        }
    }
    if (!fenced)
        body = normalize_newlines(reply);

    auto const known_set = std::set<std::string>(known.begin(), known.end());
    auto seen = std::set<std::string> {};
    auto out = std::vector<std::string> {};
    std::size_t start = 0;
    while (start < body.size())
    {
        auto const nl = body.find('\n', start);
        auto line = trim_copy(std::string_view(body).substr(start, nl == std::string::npos ? std::string::npos : nl - start));
        start = nl == std::string::npos ? body.size() : nl + 1;
        // Tolerate list decorations: "1. path", "- path", "`path`".
        auto const first = line.find_first_not_of("0123456789.)-*` \t");
        if (first != std::string::npos)
            line = line.substr(first);
        while (!line.empty() && (line.back() == '`' || line.back() == ','))
            line.pop_back();
        auto const space = line.find_first_of(" \t");
        if (space != std::string::npos)
            line = line.substr(0, space);
        if (known_set.contains(line) && seen.insert(line).second)
            out.push_back(line);
    }
    if (out.empty())
        return std::nullopt;
    return out;
}

std::vector<RankedFile> aggregate_rankings(const std::vector<RelevanceVerdict>& relevant,
                                           const std::vector<std::vector<std::string>>& repetitions)
{
    if (repetitions.empty())
        throw RankingError("no valid ranking repetitions to aggregate");

    struct Accumulator
    {
        std::int64_t rank_sum = 0;
        std::int64_t tokens = 0;
    };
    auto acc = std::map<std::string, Accumulator> {};
    for (auto const& v: relevant)
        acc[v.file_path].tokens = v.file_token_count;

    for (auto const& rep: repetitions)
    {
        auto position = std::map<std::string, std::int64_t> {};
        std::int64_t listed = 0;
        for (auto const& path: rep)
        {
            if (acc.contains(path) && !position.contains(path))
                position[path] = ++listed;
        }
        for (auto& [path, a]: acc)
        {
            auto const it = position.find(path);
            a.rank_sum += it != position.end() ? it->second : listed + 1;
        }
    }

    auto out = std::vector<RankedFile> {};
    auto sums = std::map<std::string, std::int64_t> {};
    for (auto const& [path, a]: acc)
    {
        out.push_back({path, static_cast<double>(a.rank_sum) / static_cast<double>(repetitions.size()), a.tokens});
        sums[path] = a.rank_sum;
    }
    // Every file has the same repetition count, so comparing integer sums is exact.
    std::sort(out.begin(), out.end(), [&](const RankedFile& x, const RankedFile& y) {
        auto const sx = sums.at(x.file_path);
        auto const sy = sums.at(y.file_path);
        if (sx != sy)
            return sx < sy;
        return x.file_path < y.file_path;
    });
    return out;
}

Ranking rank_files(const Instance& instance,
                   const std::vector<RelevanceVerdict>& verdicts,
                   ChatBackend& backend,
                   const PromptLibrary& prompts,
                   const ContextConfig& config)
{
    auto relevant = std::vector<RelevanceVerdict> {};
    for (auto const& v: verdicts)
    {
        if (v.relevant)
            relevant.push_back(v);
    }
    if (relevant.empty())
        throw ContractError(fmt::format("{}: ranking needs at least one relevant file", instance.instance_id));
    std::sort(relevant.begin(), relevant.end(), [](const RelevanceVerdict& a, const RelevanceVerdict& b) {
        return a.file_path < b.file_path;
    });

    auto known = std::vector<std::string> {};
    auto file_list = std::string {};
    for (auto const& v: relevant)
    {
        known.push_back(v.file_path);
        file_list += fmt::format("- {} ({} tokens): {}\n", v.file_path, v.file_token_count, v.summary);
    }

    auto const system = prompts.render("ranking_system", {});
    auto const user = prompts.render(
        "ranking_user",
        {{"issue", instance.issue_text}, {"file_list", file_list}, {"target_tokens", std::to_string(config.target_tokens)}});

    struct Outcome
    {
        std::optional<std::vector<std::string>> order;
        TokenUsage usage;
    };
    auto outcomes = std::vector<Outcome>(static_cast<std::size_t>(config.repetitions));

    parallel_for(outcomes.size(), config.repetitions, [&](std::size_t rep) {
        auto request = ChatRequest {};
        request.messages = {{Role::system, system}, {Role::user, user}};
        request.temperature = config.rank_temperature;
        request.max_output_tokens = config.max_output_tokens;
        request.cache_prefix_marker = 2;
        request.session = fmt::format("{}/ranking/{}", instance.instance_id, rep);
        request.sequence = 0;
        auto& outcome = outcomes[rep];
        auto response = complete(request, backend);
        outcome.usage += response.usage;
        outcome.order = parse_ranking_reply(response.text, known);
        if (outcome.order)
            return;

        request.messages.push_back({Role::assistant, response.text});
        request.messages.push_back(
            {Role::user, prompts.render("ranking_correction", {{"error", "no known file path was listed"}})});
        request.previous_cache_marker = 2;
        request.cache_prefix_marker = 2;
        request.sequence = 1;
        response = complete(request, backend);
        outcome.usage += response.usage;
        outcome.order = parse_ranking_reply(response.text, known);
    });

    auto ranking = Ranking {};
    for (auto& outcome: outcomes)
    {
        ranking.usage += outcome.usage;
        if (outcome.order)
            ranking.repetitions.push_back(std::move(*outcome.order));
        else
            ++ranking.dropped_repetitions;
    }
    if (ranking.repetitions.empty())
        throw RankingError(fmt::format("{}: every ranking repetition was unparseable", instance.instance_id));
    ranking.order = aggregate_rankings(relevant, ranking.repetitions);
    return ranking;
}

RankedContext assemble_context(const std::vector<RankedFile>& ranking, std::int64_t cap, std::int64_t total_scanned_tokens)
{
    auto context = RankedContext {};
    context.ranked = ranking;
    context.cap = cap;
    context.total_scanned_tokens = total_scanned_tokens;
    for (auto const& file: ranking)
    {
        if (context.total_included_tokens + file.token_count > cap)
            break;
        context.included_files.push_back(file.file_path);
        context.total_included_tokens += file.token_count;
    }
    context.empty_flagged = context.included_files.empty();
    return context;
}

bool compute_recall(const RankedContext& context, const std::vector<std::string>& gold_files)
{
    if (gold_files.empty())
        throw ContractError("recall needs at least one gold file");
    auto const included = std::set<std::string>(context.included_files.begin(), context.included_files.end());
    return std::all_of(gold_files.begin(), gold_files.end(), [&](const std::string& g) { return included.contains(g); });
}

DatasetRecall dataset_recall(const std::vector<std::optional<bool>>& per_instance)
{
    auto result = DatasetRecall {};
    int hits = 0;
    for (auto const& r: per_instance)
    {
        if (!r)
        {
            ++result.excluded;
            continue;
        }
        ++result.counted;
        hits += *r ? 1 : 0;
    }
    result.fraction = result.counted == 0 ? 0.0 : static_cast<double>(hits) / result.counted;
    return result;
}

std::optional<double> compression_factor(const RankedContext& context)
{
    if (context.total_included_tokens <= 0)
        return std::nullopt;
    return static_cast<double>(context.total_scanned_tokens) / static_cast<double>(context.total_included_tokens);
}

std::string render_context_files(const fs::path& snapshot, const std::vector<std::string>& files)
{
    auto out = std::string {};
    for (auto const& path: files)
    {
        auto const content = read_normalized(snapshot / path).value_or("");
        out += fmt::format("<file path=\"{}\">\n{}", path, content);
        if (!content.empty() && content.back() != '\n')
            out += '\n';
        out += "</file>\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const RelevanceVerdict& v)
{
    j = json {{"file_path", v.file_path},
              {"relevant", v.relevant},
              {"summary", v.summary},
              {"file_token_count", v.file_token_count},
              {"scan_error", v.scan_error},
              {"usage", v.usage}};
}

void from_json(const json& j, RelevanceVerdict& v)
{
    j.at("file_path").get_to(v.file_path);
    j.at("relevant").get_to(v.relevant);
    j.at("summary").get_to(v.summary);
    j.at("file_token_count").get_to(v.file_token_count);
    v.scan_error = j.value("scan_error", false);
    v.usage = j.value("usage", TokenUsage {});
}

void to_json(json& j, const SkippedFile& v)
{
    j = json {{"file_path", v.file_path}, {"reason", v.reason}};
}

void from_json(const json& j, SkippedFile& v)
{
    j.at("file_path").get_to(v.file_path);
    j.at("reason").get_to(v.reason);
}

void to_json(json& j, const RankedFile& v)
{
    j = json {{"file_path", v.file_path}, {"average_rank", v.average_rank}, {"token_count", v.token_count}};
}

void from_json(const json& j, RankedFile& v)
{
    j.at("file_path").get_to(v.file_path);
    j.at("average_rank").get_to(v.average_rank);
    j.at("token_count").get_to(v.token_count);
}

void to_json(json& j, const RelevanceScan& v)
{
    j = json {{"verdicts", v.verdicts}, {"skipped", v.skipped}, {"total_scanned_tokens", v.total_scanned_tokens}};
}

void from_json(const json& j, RelevanceScan& v)
{
    j.at("verdicts").get_to(v.verdicts);
    j.at("skipped").get_to(v.skipped);
    j.at("total_scanned_tokens").get_to(v.total_scanned_tokens);
}

void to_json(json& j, const Ranking& v)
{
    j = json {{"order", v.order},
              {"repetitions", v.repetitions},
              {"dropped_repetitions", v.dropped_repetitions},
              {"usage", v.usage}};
}

void from_json(const json& j, Ranking& v)
{
    j.at("order").get_to(v.order);
    j.at("repetitions").get_to(v.repetitions);
    j.at("dropped_repetitions").get_to(v.dropped_repetitions);
    j.at("usage").get_to(v.usage);
}

void to_json(json& j, const RankedContext& v)
{
    j = json {{"ranked", v.ranked},
              {"included_files", v.included_files},
              {"total_included_tokens", v.total_included_tokens},
              {"total_scanned_tokens", v.total_scanned_tokens},
              {"cap", v.cap},
              {"empty_flagged", v.empty_flagged}};
}

void from_json(const json& j, RankedContext& v)
{
    j.at("ranked").get_to(v.ranked);
    j.at("included_files").get_to(v.included_files);
    j.at("total_included_tokens").get_to(v.total_included_tokens);
    j.at("total_scanned_tokens").get_to(v.total_scanned_tokens);
    j.at("cap").get_to(v.cap);
    j.at("empty_flagged").get_to(v.empty_flagged);
}

} // namespace scaleswe
