// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scaleswe
{

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Version stamped on every persisted document.
inline constexpr int kSchemaVersion = 1;

/// Default cap applied to captured stdout / stderr.
inline constexpr std::size_t kDefaultOutputCap = 20'000;

/// Raised when a caller violates an operation's precondition.
class ContractError: public std::logic_error
{
  public:
    using std::logic_error::logic_error;
};

/// Raised when a persisted document cannot be decoded.
class SchemaError: public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

struct SourceFileFilter
{
    std::vector<std::string> extensions {".py"};
    std::vector<std::string> excluded_dirs {"test", "tests", "testing"};

    /// True when a snapshot-relative path passes the extension allowlist and
    /// no directory component is excluded.
    [[nodiscard]] bool accepts(const fs::path& relative) const;

    bool operator==(const SourceFileFilter&) const = default;
};

struct OracleEval
{
    /// Shell command template. `{workspace}` and `{instance_dir}` are substituted.
    std::string command;
    double timeout_s = 300.0;

    bool operator==(const OracleEval&) const = default;
};

struct Instance
{
    std::string instance_id;
    std::string issue_text;
    fs::path codebase_ref;
    SourceFileFilter source_file_filter;
    std::optional<std::vector<std::string>> gold_edit_files;
    std::optional<OracleEval> oracle_eval;
    /// Directory holding the descriptor; oracle commands may reference it.
    fs::path instance_dir;

    /// Throws ContractError if any invariant fails.
    void validate() const;

    bool operator==(const Instance&) const = default;
};

/// Rejects absolute paths and any `..` component.
[[nodiscard]] bool is_safe_relative_path(std::string_view path);

struct SearchReplaceBlock
{
    std::string file_path;
    std::string search_text;
    std::string replace_text;

    void validate() const;

    bool operator==(const SearchReplaceBlock&) const = default;
};

/// A candidate codebase change. Native edits are search/replace blocks;
/// externally sourced edits carry a unified diff in `patch` instead.
struct Edit
{
    std::vector<SearchReplaceBlock> blocks;
    std::optional<std::string> patch;
    /// Rendered after application; empty until then.
    std::string unified_diff;

    [[nodiscard]] bool is_patch() const { return patch.has_value(); }
    [[nodiscard]] bool empty() const { return blocks.empty() && (!patch || patch->empty()); }
    /// Tie-break key wherever a shorter diff wins.
    [[nodiscard]] std::size_t diff_length() const;

    bool operator==(const Edit&) const = default;
};

/// Standalone reproduction script. Exit 0 = fixed, exit 2 = issue present,
/// anything else (or a timeout) = broken test. The interpreter is run config.
struct TestScript
{
    std::string script_text;

    bool operator==(const TestScript&) const = default;
};

struct ExecutionResult
{
    std::optional<int> exit_code;
    std::string stdout_text;
    std::string stderr_text;
    double wall_time = 0.0;
    bool timed_out = false;

    bool operator==(const ExecutionResult&) const = default;
};

enum class TestOutcome
{
    pass,
    fail,
    error,
    timeout,
};

[[nodiscard]] TestOutcome classify(const ExecutionResult& result);
[[nodiscard]] std::string_view to_string(TestOutcome outcome);

/// Renders an execution result the way feedback prompts show it.
[[nodiscard]] std::string describe(const ExecutionResult& result);

struct TokenUsage
{
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::int64_t cache_read_tokens = 0;
    std::int64_t cache_write_tokens = 0;

    TokenUsage& operator+=(const TokenUsage& other);
    friend TokenUsage operator+(TokenUsage lhs, const TokenUsage& rhs) { return lhs += rhs; }
    [[nodiscard]] std::int64_t total() const
    {
        return input_tokens + output_tokens + cache_read_tokens + cache_write_tokens;
    }
    [[nodiscard]] bool nonnegative() const;

    bool operator==(const TokenUsage&) const = default;
};

enum class Role
{
    system,
    user,
    assistant,
};

enum class ActionKind
{
    write_test,
    write_edit,
    approve,
    select,
};

struct Action
{
    ActionKind kind = ActionKind::approve;
    std::optional<TestScript> test;
    std::optional<Edit> edit;
    std::optional<int> selected_index;

    bool operator==(const Action&) const = default;
};

struct Turn
{
    Role role = Role::user;
    std::string content;
    TokenUsage usage;
    std::optional<Action> parsed_action;

    bool operator==(const Turn&) const = default;
};

enum class MachineKind
{
    testing,
    editing,
    selection,
};

enum class TerminalStatus
{
    running,
    approved,
    exhausted,
    malformed_failure,
    backend_failure,
};

/// State after one assistant completion; always holds the latest test and edit.
struct IterationSnapshot
{
    std::optional<TestScript> test;
    std::optional<Edit> edit;
    std::optional<int> selection;

    bool operator==(const IterationSnapshot&) const = default;
};

struct Trajectory
{
    std::string trajectory_id;
    MachineKind machine_kind = MachineKind::testing;
    std::vector<Turn> turns;
    std::vector<IterationSnapshot> iteration_snapshots;
    TerminalStatus terminal_status = TerminalStatus::running;
    int completions_used = 0;
    std::vector<std::string> notes;

    [[nodiscard]] int assistant_turns() const;
    [[nodiscard]] const IterationSnapshot* final_snapshot() const;

    bool operator==(const Trajectory&) const = default;
};

struct CandidateSample
{
    std::string instance_id;
    std::string candidate_id;
    Edit edit;
    std::optional<TestScript> test;
    /// "native" or the external source name.
    std::string source = "native";
    std::optional<std::string> trajectory_id;

    [[nodiscard]] bool is_native() const { return source == "native"; }

    bool operator==(const CandidateSample&) const = default;
};

struct CorrectnessRecord
{
    std::string instance_id;
    std::vector<bool> correct;

    bool operator==(const CorrectnessRecord&) const = default;
};

/// Correctness flag of the submitted candidate.
[[nodiscard]] bool is_resolved(const CorrectnessRecord& correctness, std::size_t selected_index);

/// Orders candidates by (diff length asc, candidate id asc). Returns true when
/// `a` should be preferred over `b` at equal vote counts.
[[nodiscard]] bool shorter_diff_first(const CandidateSample& a, const CandidateSample& b);

std::string_view to_string(Role role);
std::string_view to_string(ActionKind kind);
std::string_view to_string(MachineKind kind);
std::string_view to_string(TerminalStatus status);

NLOHMANN_JSON_SERIALIZE_ENUM(Role, {{Role::system, "system"}, {Role::user, "user"}, {Role::assistant, "assistant"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ActionKind,
                             {{ActionKind::write_test, "write_test"},
                              {ActionKind::write_edit, "write_edit"},
                              {ActionKind::approve, "approve"},
                              {ActionKind::select, "select"}})
NLOHMANN_JSON_SERIALIZE_ENUM(MachineKind,
                             {{MachineKind::testing, "testing"},
                              {MachineKind::editing, "editing"},
                              {MachineKind::selection, "selection"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TerminalStatus,
                             {{TerminalStatus::running, "running"},
                              {TerminalStatus::approved, "approved"},
                              {TerminalStatus::exhausted, "exhausted"},
                              {TerminalStatus::malformed_failure, "malformed_failure"},
                              {TerminalStatus::backend_failure, "backend_failure"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TestOutcome,
                             {{TestOutcome::pass, "pass"},
                              {TestOutcome::fail, "fail"},
                              {TestOutcome::error, "error"},
                              {TestOutcome::timeout, "timeout"}})

void to_json(json& j, const SourceFileFilter& v);
void from_json(const json& j, SourceFileFilter& v);
void to_json(json& j, const OracleEval& v);
void from_json(const json& j, OracleEval& v);
void to_json(json& j, const Instance& v);
void from_json(const json& j, Instance& v);
void to_json(json& j, const SearchReplaceBlock& v);
void from_json(const json& j, SearchReplaceBlock& v);
void to_json(json& j, const Edit& v);
void from_json(const json& j, Edit& v);
void to_json(json& j, const TestScript& v);
void from_json(const json& j, TestScript& v);
void to_json(json& j, const ExecutionResult& v);
void from_json(const json& j, ExecutionResult& v);
void to_json(json& j, const TokenUsage& v);
void from_json(const json& j, TokenUsage& v);
void to_json(json& j, const Action& v);
void from_json(const json& j, Action& v);
void to_json(json& j, const Turn& v);
void from_json(const json& j, Turn& v);
void to_json(json& j, const IterationSnapshot& v);
void from_json(const json& j, IterationSnapshot& v);
void to_json(json& j, const Trajectory& v);
void from_json(const json& j, Trajectory& v);
void to_json(json& j, const CandidateSample& v);
void from_json(const json& j, CandidateSample& v);
void to_json(json& j, const CorrectnessRecord& v);
void from_json(const json& j, CorrectnessRecord& v);

/// Wraps a value as a stored document: `{"schema_version": N, "kind": ..., "data": ...}`.
[[nodiscard]] json make_document(std::string_view kind, json data);
/// Validates the envelope and returns the payload.
[[nodiscard]] const json& document_payload(const json& document, std::string_view expected_kind);

/// Deterministic, human-diffable text rendering used for every stored file.
[[nodiscard]] std::string dump_document(const json& document);

/// Normalizes CRLF / CR line endings to LF.
[[nodiscard]] std::string normalize_newlines(std::string_view text);

/// Truncates to `cap` bytes, appending a marker describing the dropped tail.
[[nodiscard]] std::string truncate_output(std::string text, std::size_t cap);

} // namespace scaleswe
