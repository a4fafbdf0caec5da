// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/core.hpp>

#include <fmt/format.h>

#include <algorithm>

namespace scaleswe
{

bool SourceFileFilter::accepts(const fs::path& relative) const
{
    if (!extensions.empty())
    {
        auto const ext = relative.extension().string();
        if (std::find(extensions.begin(), extensions.end(), ext) == extensions.end())
            return false;
    }
    auto const parent = relative.parent_path();
    for (auto const& part: parent)
    {
        if (std::find(excluded_dirs.begin(), excluded_dirs.end(), part.string()) != excluded_dirs.end())
            return false;
    }
    return true;
}

bool is_safe_relative_path(std::string_view path)
{
    if (path.empty())
        return false;
    auto const p = fs::path(path);
    if (p.is_absolute() || p.has_root_name() || p.has_root_directory())
        return false;
    for (auto const& part: p)
    {
        if (part == "..")
            return false;
    }
    return true;
}

void Instance::validate() const
{
    if (instance_id.empty())
        throw ContractError("instance_id must be nonempty");
    std::error_code ec;
    if (!fs::is_directory(codebase_ref, ec))
        throw ContractError(fmt::format("{}: codebase snapshot '{}' is not a readable directory",
                                        instance_id,
                                        codebase_ref.string()));
    if (gold_edit_files)
    {
        for (auto const& gold: *gold_edit_files)
        {
            if (!is_safe_relative_path(gold))
                throw ContractError(fmt::format("{}: gold file '{}' is not a safe relative path", instance_id, gold));
            if (!fs::is_regular_file(codebase_ref / gold, ec))
                throw ContractError(fmt::format("{}: gold file '{}' missing from snapshot", instance_id, gold));
        }
    }
}

void SearchReplaceBlock::validate() const
{
    if (search_text.empty())
        throw ContractError(fmt::format("search text for '{}' must be nonempty", file_path));
    if (!is_safe_relative_path(file_path))
        throw ContractError(fmt::format("edit path '{}' is not a safe relative path", file_path));
}

std::size_t Edit::diff_length() const
{
    if (!unified_diff.empty())
        return unified_diff.size();
    return patch ? patch->size() : 0;
}

TestOutcome classify(const ExecutionResult& result)
{
    if (result.timed_out)
        return TestOutcome::timeout;
    if (!result.exit_code)
        return TestOutcome::error;
    switch (*result.exit_code)
    {
        case 0: return TestOutcome::pass;
        case 2: return TestOutcome::fail;
        default: return TestOutcome::error;
    }
}

std::string_view to_string(TestOutcome outcome)
{
    switch (outcome)
    {
        case TestOutcome::pass: return "pass";
        case TestOutcome::fail: return "fail";
        case TestOutcome::error: return "error";
        case TestOutcome::timeout: return "timeout";
    }
    return "?";
}

std::string describe(const ExecutionResult& result)
{
    auto out = std::string {};
    if (result.timed_out)
        out += "Status: TIMED OUT (process killed)\n";
    else if (result.exit_code)
        out += fmt::format("Exit code: {}\n", *result.exit_code);
    else
        out += "Exit code: none\n";
    out += "--- stdout ---\n";
    out += result.stdout_text;
    if (!result.stdout_text.empty() && result.stdout_text.back() != '\n')
        out += '\n';
    out += "--- stderr ---\n";
    out += result.stderr_text;
    if (!result.stderr_text.empty() && result.stderr_text.back() != '\n')
        out += '\n';
    return out;
}

TokenUsage& TokenUsage::operator+=(const TokenUsage& other)
{
    input_tokens += other.input_tokens;
    output_tokens += other.output_tokens;
    cache_read_tokens += other.cache_read_tokens;
    cache_write_tokens += other.cache_write_tokens;
    return *this;
}

bool TokenUsage::nonnegative() const
{
    return input_tokens >= 0 && output_tokens >= 0 && cache_read_tokens >= 0 && cache_write_tokens >= 0;
}

int Trajectory::assistant_turns() const
{
    return static_cast<int>(
        std::count_if(turns.begin(), turns.end(), [](const Turn& t) { return t.role == Role::assistant; }));
}

const IterationSnapshot* Trajectory::final_snapshot() const
{
    return iteration_snapshots.empty() ? nullptr : &iteration_snapshots.back();
}

bool is_resolved(const CorrectnessRecord& correctness, std::size_t selected_index)
{
    if (selected_index >= correctness.correct.size())
        throw ContractError(fmt::format("selected index {} out of range for {} candidates",
                                        selected_index,
                                        correctness.correct.size()));
    return correctness.correct[selected_index];
}

bool shorter_diff_first(const CandidateSample& a, const CandidateSample& b)
{
    auto const la = a.edit.diff_length();
    auto const lb = b.edit.diff_length();
    if (la != lb)
        return la < lb;
    return a.candidate_id < b.candidate_id;
}

std::string_view to_string(Role role)
{
    switch (role)
    {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "?";
}

std::string_view to_string(ActionKind kind)
{
    switch (kind)
    {
        case ActionKind::write_test: return "write_test";
        case ActionKind::write_edit: return "write_edit";
        case ActionKind::approve: return "approve";
        case ActionKind::select: return "select";
    }
    return "?";
}

std::string_view to_string(MachineKind kind)
{
    switch (kind)
    {
        case MachineKind::testing: return "testing";
        case MachineKind::editing: return "editing";
        case MachineKind::selection: return "selection";
    }
    return "?";
}

std::string_view to_string(TerminalStatus status)
{
    switch (status)
    {
        case TerminalStatus::running: return "running";
        case TerminalStatus::approved: return "approved";
        case TerminalStatus::exhausted: return "exhausted";
        case TerminalStatus::malformed_failure: return "malformed_failure";
        case TerminalStatus::backend_failure: return "backend_failure";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// serialization

namespace
{

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& value)
{
    if (value)
        j[key] = *value;
    else
        j[key] = nullptr;
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& value)
{
    auto const it = j.find(key);
    if (it == j.end() || it->is_null())
        value.reset();
    else
        value = it->template get<T>();
}

} // namespace

void to_json(json& j, const SourceFileFilter& v)
{
    j = json {{"extensions", v.extensions}, {"excluded_dirs", v.excluded_dirs}};
}

void from_json(const json& j, SourceFileFilter& v)
{
    v = SourceFileFilter {};
    if (j.contains("extensions"))
        j.at("extensions").get_to(v.extensions);
    if (j.contains("excluded_dirs"))
        j.at("excluded_dirs").get_to(v.excluded_dirs);
}

void to_json(json& j, const OracleEval& v)
{
    j = json {{"command", v.command}, {"timeout_s", v.timeout_s}};
}

void from_json(const json& j, OracleEval& v)
{
    j.at("command").get_to(v.command);
    v.timeout_s = j.value("timeout_s", 300.0);
}

void to_json(json& j, const Instance& v)
{
    j = json {{"instance_id", v.instance_id},
              {"issue_text", v.issue_text},
              {"codebase_ref", v.codebase_ref.generic_string()},
              {"source_file_filter", v.source_file_filter},
              {"instance_dir", v.instance_dir.generic_string()}};
    put_optional(j, "gold_edit_files", v.gold_edit_files);
    put_optional(j, "oracle_eval", v.oracle_eval);
}

void from_json(const json& j, Instance& v)
{
    j.at("instance_id").get_to(v.instance_id);
    j.at("issue_text").get_to(v.issue_text);
    v.codebase_ref = j.at("codebase_ref").get<std::string>();
    v.source_file_filter = j.value("source_file_filter", SourceFileFilter {});
    v.instance_dir = j.value("instance_dir", std::string {});
    get_optional(j, "gold_edit_files", v.gold_edit_files);
    get_optional(j, "oracle_eval", v.oracle_eval);
}

void to_json(json& j, const SearchReplaceBlock& v)
{
    j = json {{"file_path", v.file_path}, {"search_text", v.search_text}, {"replace_text", v.replace_text}};
}

void from_json(const json& j, SearchReplaceBlock& v)
{
    j.at("file_path").get_to(v.file_path);
    j.at("search_text").get_to(v.search_text);
    j.at("replace_text").get_to(v.replace_text);
}

void to_json(json& j, const Edit& v)
{
    j = json {{"blocks", v.blocks}, {"unified_diff", v.unified_diff}};
    put_optional(j, "patch", v.patch);
}

void from_json(const json& j, Edit& v)
{
    j.at("blocks").get_to(v.blocks);
    j.at("unified_diff").get_to(v.unified_diff);
    get_optional(j, "patch", v.patch);
}

void to_json(json& j, const TestScript& v)
{
    j = json {{"script_text", v.script_text}};
}

void from_json(const json& j, TestScript& v)
{
    j.at("script_text").get_to(v.script_text);
}

void to_json(json& j, const ExecutionResult& v)
{
    j = json {{"stdout", v.stdout_text},
              {"stderr", v.stderr_text},
              {"wall_time", v.wall_time},
              {"timed_out", v.timed_out}};
    put_optional(j, "exit_code", v.exit_code);
}

void from_json(const json& j, ExecutionResult& v)
{
    get_optional(j, "exit_code", v.exit_code);
    j.at("stdout").get_to(v.stdout_text);
    j.at("stderr").get_to(v.stderr_text);
    j.at("wall_time").get_to(v.wall_time);
    j.at("timed_out").get_to(v.timed_out);
}

void to_json(json& j, const TokenUsage& v)
{
    j = json {{"input", v.input_tokens},
              {"output", v.output_tokens},
              {"cache_read", v.cache_read_tokens},
              {"cache_write", v.cache_write_tokens}};
}

void from_json(const json& j, TokenUsage& v)
{
    v.input_tokens = j.value("input", std::int64_t {0});
    v.output_tokens = j.value("output", std::int64_t {0});
    v.cache_read_tokens = j.value("cache_read", std::int64_t {0});
    v.cache_write_tokens = j.value("cache_write", std::int64_t {0});
}

void to_json(json& j, const Action& v)
{
    j = json {{"kind", v.kind}};
    put_optional(j, "test", v.test);
    put_optional(j, "edit", v.edit);
    put_optional(j, "selected_index", v.selected_index);
}

void from_json(const json& j, Action& v)
{
    j.at("kind").get_to(v.kind);
    get_optional(j, "test", v.test);
    get_optional(j, "edit", v.edit);
    get_optional(j, "selected_index", v.selected_index);
}

void to_json(json& j, const Turn& v)
{
    j = json {{"role", v.role}, {"content", v.content}, {"usage", v.usage}};
    put_optional(j, "parsed_action", v.parsed_action);
}

void from_json(const json& j, Turn& v)
{
    j.at("role").get_to(v.role);
    j.at("content").get_to(v.content);
    j.at("usage").get_to(v.usage);
    get_optional(j, "parsed_action", v.parsed_action);
}

void to_json(json& j, const IterationSnapshot& v)
{
    j = json::object();
    put_optional(j, "test", v.test);
    put_optional(j, "edit", v.edit);
    put_optional(j, "selection", v.selection);
}

void from_json(const json& j, IterationSnapshot& v)
{
    get_optional(j, "test", v.test);
    get_optional(j, "edit", v.edit);
    get_optional(j, "selection", v.selection);
}

void to_json(json& j, const Trajectory& v)
{
    j = json {{"trajectory_id", v.trajectory_id},
              {"machine_kind", v.machine_kind},
              {"turns", v.turns},
              {"iteration_snapshots", v.iteration_snapshots},
              {"terminal_status", v.terminal_status},
              {"completions_used", v.completions_used},
              {"notes", v.notes}};
}

void from_json(const json& j, Trajectory& v)
{
    j.at("trajectory_id").get_to(v.trajectory_id);
    j.at("machine_kind").get_to(v.machine_kind);
    j.at("turns").get_to(v.turns);
    j.at("iteration_snapshots").get_to(v.iteration_snapshots);
    j.at("terminal_status").get_to(v.terminal_status);
    j.at("completions_used").get_to(v.completions_used);
    v.notes = j.value("notes", std::vector<std::string> {});
}

void to_json(json& j, const CandidateSample& v)
{
    j = json {{"instance_id", v.instance_id},
              {"candidate_id", v.candidate_id},
              {"edit", v.edit},
              {"source", v.source}};
    put_optional(j, "test", v.test);
    put_optional(j, "trajectory_id", v.trajectory_id);
}

void from_json(const json& j, CandidateSample& v)
{
    j.at("instance_id").get_to(v.instance_id);
    j.at("candidate_id").get_to(v.candidate_id);
    j.at("edit").get_to(v.edit);
    j.at("source").get_to(v.source);
    get_optional(j, "test", v.test);
    get_optional(j, "trajectory_id", v.trajectory_id);
}

void to_json(json& j, const CorrectnessRecord& v)
{
    j = json {{"instance_id", v.instance_id}, {"correct", v.correct}};
}

void from_json(const json& j, CorrectnessRecord& v)
{
    j.at("instance_id").get_to(v.instance_id);
    j.at("correct").get_to(v.correct);
}

json make_document(std::string_view kind, json data)
{
    return json {{"schema_version", kSchemaVersion}, {"kind", std::string(kind)}, {"data", std::move(data)}};
}

const json& document_payload(const json& document, std::string_view expected_kind)
{
    if (!document.is_object() || !document.contains("schema_version"))
        throw SchemaError("document has no schema_version");
    auto const version = document.at("schema_version").get<int>();
    if (version != kSchemaVersion)
        throw SchemaError(fmt::format("unsupported schema_version {} (expected {})", version, kSchemaVersion));
    auto const kind = document.value("kind", std::string {});
    if (kind != expected_kind)
        throw SchemaError(fmt::format("expected a '{}' document, found '{}'", expected_kind, kind));
    return document.at("data");
}

std::string dump_document(const json& document)
{
    return document.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

std::string normalize_newlines(std::string_view text)
{
    auto out = std::string {};
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
    {
        if (text[i] == '\r')
        {
            out += '\n';
            if (i + 1 < text.size() && text[i + 1] == '\n')
                ++i;
        }
        else
        {
            out += text[i];
        }
    }
    return out;
}

std::string truncate_output(std::string text, std::size_t cap)
{
    if (text.size() <= cap)
        return text;
    auto const dropped = text.size() - cap;
    text.resize(cap);
    text += fmt::format("\n[... output truncated: {} bytes omitted]\n", dropped);
    return text;
}

} // namespace scaleswe
