// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>
#include <scaleswe/diff.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scaleswe
{

struct SandboxConfig
{
    /// Parent directory for private workspace copies.
    fs::path workspace_root = fs::temp_directory_path() / "scaleswe-workspaces";
    /// `{script}` is replaced with the script path; appended if absent.
    std::vector<std::string> interpreter_cmd {"python3", "{script}"};
    /// Written at the workspace root so the script can import repository modules.
    std::string script_filename = "_generated_test.py";
    double timeout_s = 100.0;
    std::vector<std::string> env_allowlist {"PATH", "HOME", "LANG", "LC_ALL", "TMPDIR"};
    std::map<std::string, std::string> env_extra {{"PYTHONDONTWRITEBYTECODE", "1"}};
    std::size_t output_cap = kDefaultOutputCap;
};

void to_json(json& j, const SandboxConfig& v);
void from_json(const json& j, SandboxConfig& v);

enum class SandboxErrorKind
{
    materialization,
    environment,
    evaluation,
};

class SandboxError: public std::runtime_error
{
  public:
    SandboxError(SandboxErrorKind kind, const std::string& what): std::runtime_error(what), _kind(kind) {}

    [[nodiscard]] SandboxErrorKind kind() const noexcept { return _kind; }

  private:
    SandboxErrorKind _kind;
};

/// A disposable private copy of a snapshot; removed on destruction.
class Workspace
{
  public:
    Workspace(std::string id, fs::path root);
    Workspace(const Workspace&) = delete;
    Workspace& operator=(const Workspace&) = delete;
    Workspace(Workspace&& other) noexcept;
    Workspace& operator=(Workspace&& other) noexcept;
    ~Workspace();

    [[nodiscard]] const std::string& id() const { return _id; }
    [[nodiscard]] const fs::path& root() const { return _root; }
    [[nodiscard]] const std::optional<Edit>& applied_edit() const { return _applied; }

  private:
    friend class Sandbox;

    std::string _id;
    fs::path _root;
    std::optional<Edit> _applied;
};

/// Result of apply_edit: the diff on success, the first failing block otherwise.
struct ApplyResult
{
    std::string unified_diff;
    std::optional<EditError> error;

    [[nodiscard]] bool ok() const { return !error.has_value(); }
};

struct CandidateEvaluation
{
    bool correct = false;
    std::optional<std::string> reason;
};

/// SHA-256 over sorted (relative path, contents) pairs of a directory tree.
[[nodiscard]] std::string tree_digest(const fs::path& root);

/// Reads a snapshot's files (newline-normalized) into memory.
[[nodiscard]] std::optional<std::string> read_normalized(const fs::path& path);

class Sandbox
{
  public:
    explicit Sandbox(SandboxConfig config = {});

    [[nodiscard]] const SandboxConfig& config() const { return _config; }

    /// Byte-identical private copy of the instance snapshot.
    [[nodiscard]] Workspace materialize(const Instance& instance) const;
    [[nodiscard]] Workspace materialize(const fs::path& snapshot) const;

    /// All-or-nothing: on any error nothing in the workspace changes. Caches
    /// the diff on `edit`. A workspace accepts one edit only.
    ApplyResult apply_edit(Workspace& workspace, Edit& edit) const;

    /// Writes the script at the workspace root and runs it there.
    [[nodiscard]] ExecutionResult run_script(const Workspace& workspace,
                                             const TestScript& test,
                                             std::optional<double> timeout_s = std::nullopt) const;

    /// Fresh workspace, apply, run the oracle command. Exit 0 = correct.
    [[nodiscard]] CandidateEvaluation evaluate_candidate(const Instance& instance, const Edit& edit) const;

    /// Applies `edit` in memory against the snapshot and renders its diff.
    [[nodiscard]] ApplyResult render_edit(const fs::path& snapshot, const Edit& edit) const;

  private:
    [[nodiscard]] std::map<std::string, std::string> environment() const;

    SandboxConfig _config;
};

} // namespace scaleswe
