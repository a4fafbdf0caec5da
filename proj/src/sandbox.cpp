// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/llm.hpp>
#include <scaleswe/process.hpp>
#include <scaleswe/sandbox.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace scaleswe
{

void to_json(json& j, const SandboxConfig& v)
{
    j = json {{"workspace_root", v.workspace_root.string()},
              {"interpreter_cmd", v.interpreter_cmd},
              {"script_filename", v.script_filename},
              {"timeout_s", v.timeout_s},
              {"env_allowlist", v.env_allowlist},
              {"env_extra", v.env_extra},
              {"output_cap", v.output_cap}};
}

void from_json(const json& j, SandboxConfig& v)
{
    auto const d = SandboxConfig {};
    v.workspace_root = j.value("workspace_root", d.workspace_root.string());
    v.interpreter_cmd = j.value("interpreter_cmd", d.interpreter_cmd);
    v.script_filename = j.value("script_filename", d.script_filename);
    v.timeout_s = j.value("timeout_s", d.timeout_s);
    v.env_allowlist = j.value("env_allowlist", d.env_allowlist);
    v.env_extra = j.value("env_extra", d.env_extra);
    v.output_cap = j.value("output_cap", d.output_cap);
    if (v.interpreter_cmd.empty())
        throw ContractError("interpreter_cmd must be nonempty");
    if (v.timeout_s <= 0)
        throw ContractError("timeout_s must be positive");
}

Workspace::Workspace(std::string id, fs::path root): _id(std::move(id)), _root(std::move(root)) {}

Workspace::Workspace(Workspace&& other) noexcept:
    _id(std::move(other._id)), _root(std::exchange(other._root, {})), _applied(std::move(other._applied))
{
}

Workspace& Workspace::operator=(Workspace&& other) noexcept
{
    if (this != &other)
    {
        if (!_root.empty())
        {
            std::error_code ec;
            fs::remove_all(_root, ec);
        }
        _id = std::move(other._id);
        _root = std::exchange(other._root, {});
        _applied = std::move(other._applied);
    }
    return *this;
}

Workspace::~Workspace()
{
    if (!_root.empty())
    {
        std::error_code ec;
        fs::remove_all(_root, ec);
    }
}

std::optional<std::string> read_normalized(const fs::path& path)
{
    std::error_code ec;
    if (!fs::is_regular_file(path, ec))
        return std::nullopt;
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        return std::nullopt;
    auto buffer = std::ostringstream {};
    buffer << in.rdbuf();
    return normalize_newlines(buffer.str());
}

std::string tree_digest(const fs::path& root)
{
    auto entries = std::vector<std::pair<std::string, fs::path>> {};
    for (auto const& entry: fs::recursive_directory_iterator(root))
    {
        if (entry.is_regular_file())
            entries.emplace_back(fs::relative(entry.path(), root).generic_string(), entry.path());
    }
    std::sort(entries.begin(), entries.end());
    auto manifest = std::string {};
    for (auto const& [relative, path]: entries)
    {
        auto in = std::ifstream(path, std::ios::binary);
        auto buffer = std::ostringstream {};
        buffer << in.rdbuf();
        manifest += relative;
        manifest += '\0';
        manifest += sha256_hex(buffer.str());
        manifest += '\n';
    }
    return sha256_hex(manifest);
}

Sandbox::Sandbox(SandboxConfig config): _config(std::move(config)) {}

Workspace Sandbox::materialize(const Instance& instance) const
{
    return materialize(instance.codebase_ref);
}

Workspace Sandbox::materialize(const fs::path& snapshot) const
{
    std::error_code ec;
    if (!fs::is_directory(snapshot, ec))
        throw SandboxError(SandboxErrorKind::materialization,
                           fmt::format("snapshot '{}' is not a readable directory", snapshot.string()));
    fs::create_directories(_config.workspace_root, ec);
    if (ec)
        throw SandboxError(SandboxErrorKind::materialization,
                           fmt::format("cannot create workspace root '{}': {}",
                                       _config.workspace_root.string(),
                                       ec.message()));
    auto pattern = (_config.workspace_root / "ws-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr)
        throw SandboxError(SandboxErrorKind::materialization, "mkdtemp failed for a workspace");
    auto workspace = Workspace(fs::path(pattern).filename().string(), fs::path(pattern));
    fs::copy(snapshot, workspace.root(), fs::copy_options::recursive | fs::copy_options::copy_symlinks, ec);
    if (ec)
        throw SandboxError(SandboxErrorKind::materialization,
                           fmt::format("copying '{}' failed: {}", snapshot.string(), ec.message()));
    return workspace;
}

namespace
{

EditApplication apply_in_memory(const fs::path& root, const Edit& edit)
{
    auto load = [&](const std::string& relative) { return read_normalized(root / relative); };
    if (edit.patch)
        return apply_patch({}, *edit.patch, load);
    return apply_blocks({}, edit.blocks, load);
}

} // namespace

ApplyResult Sandbox::render_edit(const fs::path& snapshot, const Edit& edit) const
{
    auto applied = apply_in_memory(snapshot, edit);
    return ApplyResult {applied.ok() ? applied.diff : std::string {}, applied.error};
}

ApplyResult Sandbox::apply_edit(Workspace& workspace, Edit& edit) const
{
    if (workspace._applied)
        throw ContractError(fmt::format("workspace {} already has an edit applied", workspace.id()));

    auto applied = apply_in_memory(workspace.root(), edit);
    if (!applied.ok())
        return ApplyResult {{}, applied.error};

    // Stage every write in a temp file first, then rename into place.
    auto staged = std::vector<std::pair<fs::path, fs::path>> {};
    auto cleanup = [&] {
        std::error_code ec;
        for (auto const& [tmp, _]: staged)
            fs::remove(tmp, ec);
    };
    auto touched = touched_files(edit);
    for (auto const& relative: touched)
    {
        auto const target = workspace.root() / relative;
        auto const it = applied.files.find(relative);
        if (it == applied.files.end())
            continue;
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
        auto const tmp = target.string() + ".scaleswe-staged";
        auto out = std::ofstream(tmp, std::ios::binary | std::ios::trunc);
        out << it->second;
        out.close();
        if (!out)
        {
            cleanup();
            throw SandboxError(SandboxErrorKind::materialization, fmt::format("cannot stage write to {}", relative));
        }
        staged.emplace_back(tmp, target);
    }
    for (auto const& [tmp, target]: staged)
        fs::rename(tmp, target);
    for (auto const& relative: touched)
    {
        if (!applied.files.contains(relative))
        {
            std::error_code ec;
            fs::remove(workspace.root() / relative, ec);
        }
    }

    edit.unified_diff = applied.diff;
    workspace._applied = edit;
    return ApplyResult {applied.diff, std::nullopt};
}

std::map<std::string, std::string> Sandbox::environment() const
{
    auto env = inherited_environment(_config.env_allowlist);
    for (auto const& [key, value]: _config.env_extra)
        env[key] = value;
    return env;
}

ExecutionResult Sandbox::run_script(const Workspace& workspace,
                                    const TestScript& test,
                                    std::optional<double> timeout_s) const
{
    auto const script_path = workspace.root() / _config.script_filename;
    {
        auto out = std::ofstream(script_path, std::ios::binary | std::ios::trunc);
        out << test.script_text;
    }
    auto spec = ProcessSpec {};
    bool substituted = false;
    for (auto const& arg: _config.interpreter_cmd)
    {
        if (arg == "{script}")
        {
            spec.argv.push_back(_config.script_filename);
            substituted = true;
        }
        else
        {
            spec.argv.push_back(arg);
        }
    }
    if (!substituted)
        spec.argv.push_back(_config.script_filename);
    spec.working_directory = workspace.root();
    spec.environment = environment();
    spec.timeout_s = timeout_s.value_or(_config.timeout_s);
    spec.output_cap = _config.output_cap;
    auto result = ExecutionResult {};
    try
    {
        result = run_process(spec);
    }
    catch (const SpawnError& e)
    {
        throw SandboxError(SandboxErrorKind::environment, e.what());
    }
    // Workspace paths are random; keep feedback reproducible.
    auto roots = std::vector<std::string> {fs::absolute(workspace.root()).string()};
    std::error_code ec;
    auto const canonical = fs::canonical(workspace.root(), ec);
    if (!ec && canonical.string() != roots.front())
        roots.push_back(canonical.string());
    for (auto const& root: roots)
    {
        for (auto* text: {&result.stdout_text, &result.stderr_text})
        {
            for (auto pos = text->find(root); pos != std::string::npos; pos = text->find(root, pos + 1))
                text->replace(pos, root.size(), ".");
        }
    }
    return result;
}

namespace
{

std::string substitute(std::string text, std::string_view key, std::string_view value)
{
    for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size()))
        text.replace(pos, key.size(), value);
    return text;
}

} // namespace

CandidateEvaluation Sandbox::evaluate_candidate(const Instance& instance, const Edit& edit) const
{
    if (!instance.oracle_eval)
        throw ContractError(fmt::format("{}: no oracle evaluator configured", instance.instance_id));
    auto workspace = materialize(instance);
    auto copy = edit;
    auto const applied = apply_edit(workspace, copy);
    if (!applied.ok())
        return CandidateEvaluation {false, applied.error->describe()};

    auto command = substitute(instance.oracle_eval->command, "{workspace}", fs::absolute(workspace.root()).string());
    command = substitute(command, "{instance_dir}", fs::absolute(instance.instance_dir).string());

    auto spec = ProcessSpec {};
    spec.argv = {"/bin/sh", "-c", command};
    spec.working_directory = workspace.root();
    spec.environment = environment();
    spec.timeout_s = instance.oracle_eval->timeout_s;
    spec.output_cap = _config.output_cap;
    auto result = ExecutionResult {};
    try
    {
        result = run_process(spec);
    }
    catch (const SpawnError& e)
    {
        throw SandboxError(SandboxErrorKind::evaluation, e.what());
    }
    if (result.timed_out)
        throw SandboxError(SandboxErrorKind::evaluation,
                           fmt::format("{}: oracle timed out after {:.0f}s", instance.instance_id, spec.timeout_s));
    if (result.exit_code == 126 || result.exit_code == 127)
        throw SandboxError(SandboxErrorKind::evaluation,
                           fmt::format("{}: oracle command could not run: {}", instance.instance_id, result.stderr_text));
    if (result.exit_code == 0)
        return CandidateEvaluation {true, std::nullopt};
    return CandidateEvaluation {false, fmt::format("oracle exited with {}", result.exit_code.value_or(-1))};
}

} // namespace scaleswe
