// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/actions.hpp>
#include <scaleswe/machines.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <set>

namespace scaleswe
{

void MachineConfig::validate() const
{
    if (max_completions < 1)
        throw ContractError("machine config: max_completions must be >= 1");
    if (max_output_tokens < 1)
        throw ContractError("machine config: max_output_tokens must be >= 1");
    if (timeout_s && *timeout_s <= 0)
        throw ContractError("machine config: timeout_s must be positive");
}

void to_json(json& j, const MachineConfig& v)
{
    j = json {{"max_completions", v.max_completions},
              {"temperature", v.temperature},
              {"max_output_tokens", v.max_output_tokens}};
    if (v.timeout_s)
        j["timeout_s"] = *v.timeout_s;
}

void from_json(const json& j, MachineConfig& v)
{
    auto const d = MachineConfig {};
    v.max_completions = j.value("max_completions", d.max_completions);
    v.temperature = j.value("temperature", d.temperature);
    v.max_output_tokens = j.value("max_output_tokens", d.max_output_tokens);
    if (j.contains("timeout_s") && !j.at("timeout_s").is_null())
        v.timeout_s = j.at("timeout_s").get<double>();
    else
        v.timeout_s.reset();
    v.validate();
}

bool action_permitted(MachineKind machine, ActionKind action)
{
    switch (machine)
    {
        case MachineKind::testing: return action == ActionKind::write_test || action == ActionKind::approve;
        case MachineKind::editing: return action != ActionKind::select;
        case MachineKind::selection: return action == ActionKind::write_test || action == ActionKind::select;
    }
    return false;
}

const IterationSnapshot* truncate_at_iteration(const Trajectory& trajectory, int i)
{
    if (i < 1)
        throw ContractError(fmt::format("truncation iteration must be >= 1, got {}", i));
    if (trajectory.iteration_snapshots.empty())
        return nullptr;
    auto const last = static_cast<int>(trajectory.iteration_snapshots.size());
    return &trajectory.iteration_snapshots[static_cast<std::size_t>(std::min(i, last) - 1)];
}

bool resumable(const Trajectory& trajectory)
{
    return trajectory.terminal_status == TerminalStatus::running ||
           trajectory.terminal_status == TerminalStatus::backend_failure;
}

namespace
{

struct Step
{
    /// Set when the action cannot be carried out in the current state.
    std::optional<std::string> malformed;
    bool terminal = false;
    std::string feedback;
};

class Machine
{
  public:
    virtual ~Machine() = default;

    [[nodiscard]] virtual MachineKind kind() const = 0;
    [[nodiscard]] virtual std::string system_prompt() const = 0;
    [[nodiscard]] virtual std::string initial_prompt() = 0;
    virtual Step execute(const Action& action, Trajectory& trajectory) = 0;
    [[nodiscard]] virtual IterationSnapshot snapshot() const = 0;
    virtual void restore(const Trajectory& trajectory) = 0;
};

std::string_view action_name(ActionKind kind)
{
    switch (kind)
    {
        case ActionKind::write_test: return "test";
        case ActionKind::write_edit: return "edit";
        case ActionKind::approve: return "approve";
        case ActionKind::select: return "select";
    }
    return "?";
}

std::optional<std::size_t> last_assistant_index(const Trajectory& t)
{
    for (auto i = t.turns.size(); i-- > 0;)
    {
        if (t.turns[i].role == Role::assistant)
            return i;
    }
    return std::nullopt;
}

Trajectory run_engine(Machine& machine, const std::string& trajectory_id, MachineEnv& env, const Trajectory* resume_from)
{
    env.config.validate();
    auto t = Trajectory {};
    if (resume_from && resume_from->trajectory_id == trajectory_id && resumable(*resume_from) &&
        resume_from->machine_kind == machine.kind() && !resume_from->turns.empty())
    {
        t = *resume_from;
        t.terminal_status = TerminalStatus::running;
        machine.restore(t);
    }
    else
    {
        t.trajectory_id = trajectory_id;
        t.machine_kind = machine.kind();
        t.turns.push_back({Role::system, machine.system_prompt(), {}, std::nullopt});
        t.turns.push_back({Role::user, machine.initial_prompt(), {}, std::nullopt});
    }

    auto const notify = [&] {
        if (env.sink)
            env.sink(t);
    };

    // A pending correction is the only state not visible in snapshots.
    bool previous_malformed = false;
    if (auto const last = last_assistant_index(t))
        previous_malformed = !t.turns[*last].parsed_action.has_value();

    while (t.completions_used < env.config.max_completions)
    {
        auto request = ChatRequest {};
        for (auto const& turn: t.turns)
            request.messages.push_back({turn.role, turn.content});
        request.temperature = env.config.temperature;
        request.max_output_tokens = env.config.max_output_tokens;
        request.cache_prefix_marker = t.turns.size();
        request.previous_cache_marker = last_assistant_index(t);
        request.session = trajectory_id;
        request.sequence = t.completions_used;

        auto response = ChatResponse {};
        try
        {
            response = complete(request, env.backend);
        }
        catch (const BackendError&)
        {
            t.terminal_status = TerminalStatus::backend_failure;
            notify();
            throw;
        }
        ++t.completions_used;

        auto turn = Turn {Role::assistant, response.text, response.usage, std::nullopt};
        auto const parse = parse_action(response.text);
        auto error = std::optional<std::string> {};
        auto step = Step {};
        if (!parse.ok())
            error = parse.error;
        else if (!action_permitted(machine.kind(), parse.action->kind))
            error = fmt::format("the '{}' action is not available in this session", action_name(parse.action->kind));
        else
        {
            step = machine.execute(*parse.action, t);
            error = step.malformed;
        }
        if (!error)
            turn.parsed_action = parse.action;
        t.turns.push_back(std::move(turn));
        t.iteration_snapshots.push_back(machine.snapshot());

        auto const remaining = t.completions_used < env.config.max_completions;
        if (error)
        {
            if (previous_malformed)
            {
                t.terminal_status = TerminalStatus::malformed_failure;
                t.notes.push_back(fmt::format("completion {}: malformed again after a correction: {}",
                                              t.completions_used,
                                              *error));
                break;
            }
            previous_malformed = true;
            if (remaining)
                t.turns.push_back({Role::user, env.prompts.render("correction", {{"error", *error}}), {}, std::nullopt});
        }
        else
        {
            previous_malformed = false;
            if (step.terminal)
            {
                t.terminal_status = TerminalStatus::approved;
                break;
            }
            if (remaining)
                t.turns.push_back({Role::user, step.feedback, {}, std::nullopt});
        }
        notify();
    }
    if (t.terminal_status == TerminalStatus::running)
        t.terminal_status = TerminalStatus::exhausted;
    notify();
    return t;
}

std::optional<Action> accepted_action(const Turn& turn)
{
    return turn.role == Role::assistant ? turn.parsed_action : std::nullopt;
}

// ---------------------------------------------------------------------------

class TestingMachine final: public Machine
{
  public:
    TestingMachine(const Instance& instance, const MachineEnv& env): _instance(instance), _env(env) {}

    MachineKind kind() const override { return MachineKind::testing; }

    std::string system_prompt() const override { return _env.prompts.render("testing_system", {}); }

    std::string initial_prompt() override
    {
        return _env.prompts.render("testing_initial", {{"issue", _instance.issue_text}});
    }

    Step execute(const Action& action, Trajectory&) override
    {
        if (action.kind == ActionKind::approve)
        {
            if (!_test)
                return {"there is no test script to approve yet; write one first", false, {}};
            return {std::nullopt, true, {}};
        }
        _test = *action.test;
        auto const workspace = _env.sandbox.materialize(_instance);
        auto const result = _env.sandbox.run_script(workspace, *_test, _env.config.timeout_s);
        return {std::nullopt,
                false,
                _env.prompts.render("testing_iteration", {{"execution_output", describe(result)}})};
    }

    IterationSnapshot snapshot() const override { return {_test, std::nullopt, std::nullopt}; }

    void restore(const Trajectory& t) override
    {
        if (auto const* s = t.final_snapshot())
            _test = s->test;
    }

  private:
    const Instance& _instance;
    const MachineEnv& _env;
    std::optional<TestScript> _test;
};

class EditingMachine final: public Machine
{
  public:
    EditingMachine(const Instance& instance, const RankedContext& context, const TestScript& seed_test, const MachineEnv& env):
        _instance(instance), _context(context), _test(seed_test), _env(env)
    {
    }

    MachineKind kind() const override { return MachineKind::editing; }

    std::string system_prompt() const override { return _env.prompts.render("editing_system", {}); }

    std::string initial_prompt() override
    {
        auto const workspace = _env.sandbox.materialize(_instance);
        auto const pre = _env.sandbox.run_script(workspace, _test, _env.config.timeout_s);
        return _env.prompts.render("editing_initial",
                                   {{"issue", _instance.issue_text},
                                    {"context", render_context_files(_instance.codebase_ref, _context.included_files)},
                                    {"test_script", _test.script_text},
                                    {"pre_edit_output", describe(pre)}});
    }

    Step execute(const Action& action, Trajectory& trajectory) override
    {
        switch (action.kind)
        {
            case ActionKind::approve:
                if (!_edit)
                    return {"there is no edit to approve yet; write one first", false, {}};
                if (!_two_sided)
                    evaluate();
                if (!*_two_sided)
                    trajectory.notes.push_back(fmt::format(
                        "completion {}: approved although the test does not fail before and pass after the edit",
                        trajectory.completions_used));
                return {std::nullopt, true, {}};
            case ActionKind::write_test: _test = *action.test; break;
            case ActionKind::write_edit: _edit = *action.edit; break;
            case ActionKind::select: break;
        }
        return {std::nullopt, false, _env.prompts.render("editing_iteration", {{"feedback", evaluate()}})};
    }

    IterationSnapshot snapshot() const override { return {_test, _edit, std::nullopt}; }

    void restore(const Trajectory& t) override
    {
        if (auto const* s = t.final_snapshot())
        {
            if (s->test)
                _test = *s->test;
            _edit = s->edit;
        }
    }

  private:
    /// Runs the test before and after the current edit; records whether the
    /// pair is two-sided and returns the feedback text.
    std::string evaluate()
    {
        auto const unedited = _env.sandbox.materialize(_instance);
        auto const pre = _env.sandbox.run_script(unedited, _test, _env.config.timeout_s);
        auto const pre_text = describe(pre);
        if (!_edit)
        {
            _two_sided = false;
            return fmt::format("No edit has been written yet, so both runs use the unedited repository.\n\n"
                               "Test output on the unedited repository:\n{}\n"
                               "Test output on the edited repository:\n{}",
                               pre_text,
                               pre_text);
        }
        auto edited = _env.sandbox.materialize(_instance);
        auto const applied = _env.sandbox.apply_edit(edited, *_edit);
        if (!applied.ok())
        {
            _two_sided = false;
            return fmt::format("The edit could not be applied:\n{}\n\nTest output on the unedited repository:\n{}",
                               applied.error->describe(),
                               pre_text);
        }
        auto const post = _env.sandbox.run_script(edited, _test, _env.config.timeout_s);
        _two_sided = classify(pre) == TestOutcome::fail && classify(post) == TestOutcome::pass;
        return fmt::format("Test output on the unedited repository:\n{}\nTest output after applying your edit:\n{}",
                           pre_text,
                           describe(post));
    }

    const Instance& _instance;
    const RankedContext& _context;
    TestScript _test;
    const MachineEnv& _env;
    std::optional<Edit> _edit;
    std::optional<bool> _two_sided;
};

std::vector<CandidateSample> with_rendered_diffs(const Sandbox& sandbox,
                                                 const Instance& instance,
                                                 std::vector<CandidateSample> candidates)
{
    for (auto& c: candidates)
    {
        if (c.edit.unified_diff.empty())
            c.edit.unified_diff = sandbox.render_edit(instance.codebase_ref, c.edit).unified_diff;
    }
    return candidates;
}

class SelectionMachine final: public Machine
{
  public:
    SelectionMachine(const Instance& instance,
                     std::vector<CandidateSample> candidates,
                     const TestScript& example_test,
                     const MachineEnv& env):
        _instance(instance),
        _candidates(std::move(candidates)),
        _example(example_test),
        _env(env),
        _passes(_candidates.size(), 0)
    {
    }

    MachineKind kind() const override { return MachineKind::selection; }

    std::string system_prompt() const override { return _env.prompts.render("selection_system", {}); }

    std::string initial_prompt() override
    {
        auto files = std::set<std::string> {};
        for (auto const& c: _candidates)
        {
            for (auto const& f: touched_files(c.edit))
                files.insert(f);
        }
        return _env.prompts.render(
            "selection_initial",
            {{"issue", _instance.issue_text},
             {"file_contents",
              render_context_files(_instance.codebase_ref, std::vector<std::string>(files.begin(), files.end()))},
             {"candidates", render_candidates(_env.sandbox, _instance, _candidates)},
             {"example_test", _example.script_text}});
    }

    Step execute(const Action& action, Trajectory&) override
    {
        if (action.kind == ActionKind::select)
        {
            auto const index = *action.selected_index;
            if (index < 0 || static_cast<std::size_t>(index) >= _candidates.size())
                return {fmt::format("candidate {} does not exist; choose a number from 0 to {}", index, _candidates.size() - 1),
                        false,
                        {}};
            _selection = index;
            return {std::nullopt, true, {}};
        }
        _test = *action.test;
        return {std::nullopt, false, _env.prompts.render("selection_iteration", {{"feedback", run_test(*_test)}})};
    }

    IterationSnapshot snapshot() const override { return {_test, std::nullopt, _selection}; }

    void restore(const Trajectory& t) override
    {
        // Tallies are not stored; replay every accepted test.
        for (auto const& turn: t.turns)
        {
            auto const action = accepted_action(turn);
            if (action && action->kind == ActionKind::write_test)
            {
                _test = *action->test;
                (void)run_test(*_test);
            }
        }
    }

    [[nodiscard]] std::optional<int> selection() const { return _selection; }
    [[nodiscard]] const std::vector<int>& passes() const { return _passes; }
    [[nodiscard]] const std::vector<CandidateSample>& candidates() const { return _candidates; }

  private:
    std::string run_test(const TestScript& test)
    {
        auto const unedited = _env.sandbox.materialize(_instance);
        auto out = fmt::format("Test output on the unedited repository:\n{}\n",
                               describe(_env.sandbox.run_script(unedited, test, _env.config.timeout_s)));
        for (std::size_t i = 0; i < _candidates.size(); ++i)
        {
            auto workspace = _env.sandbox.materialize(_instance);
            auto edit = _candidates[i].edit;
            auto const applied = _env.sandbox.apply_edit(workspace, edit);
            if (!applied.ok())
            {
                out += fmt::format("Candidate {}: the edit does not apply ({})\n\n", i, applied.error->describe());
                continue;
            }
            auto const result = _env.sandbox.run_script(workspace, test, _env.config.timeout_s);
            if (classify(result) == TestOutcome::pass)
                ++_passes[i];
            out += fmt::format("Test output with candidate {}:\n{}\n", i, describe(result));
        }
        return out;
    }

    const Instance& _instance;
    std::vector<CandidateSample> _candidates;
    TestScript _example;
    const MachineEnv& _env;
    std::vector<int> _passes;
    std::optional<TestScript> _test;
    std::optional<int> _selection;
};

} // namespace

std::string render_candidates(const Sandbox& sandbox, const Instance& instance, const std::vector<CandidateSample>& candidates)
{
    auto out = std::string {};
    for (std::size_t i = 0; i < candidates.size(); ++i)
    {
        auto diff = candidates[i].edit.unified_diff;
        if (diff.empty())
        {
            auto const rendered = sandbox.render_edit(instance.codebase_ref, candidates[i].edit);
            diff = rendered.ok() ? rendered.unified_diff : fmt::format("(edit does not apply: {})\n", rendered.error->describe());
        }
        out += fmt::format("<candidate number=\"{}\">\n{}", i, diff);
        if (!diff.empty() && diff.back() != '\n')
            out += '\n';
        out += "</candidate>\n";
    }
    return out;
}

Trajectory run_testing_machine(const Instance& instance,
                               const std::string& trajectory_id,
                               MachineEnv env,
                               const Trajectory* resume_from)
{
    auto machine = TestingMachine(instance, env);
    return run_engine(machine, trajectory_id, env, resume_from);
}

Trajectory run_editing_machine(const Instance& instance,
                               const RankedContext& context,
                               const Trajectory& seed,
                               const std::string& trajectory_id,
                               MachineEnv env,
                               const Trajectory* resume_from)
{
    auto const* final = seed.final_snapshot();
    if (seed.machine_kind != MachineKind::testing || !final || !final->test)
        throw ContractError(fmt::format("{}: seed trajectory '{}' holds no final test", instance.instance_id, seed.trajectory_id));
    auto machine = EditingMachine(instance, context, *final->test, env);
    return run_engine(machine, trajectory_id, env, resume_from);
}

SelectionOutcome run_selection_machine(const Instance& instance,
                                       const std::vector<CandidateSample>& candidates,
                                       const TestScript& example_test,
                                       const std::string& trajectory_id,
                                       MachineEnv env,
                                       const Trajectory* resume_from)
{
    if (candidates.empty())
        throw ContractError(fmt::format("{}: selection needs at least one candidate", instance.instance_id));
    auto machine = SelectionMachine(instance, with_rendered_diffs(env.sandbox, instance, candidates), example_test, env);
    auto outcome = SelectionOutcome {};
    outcome.trajectory = run_engine(machine, trajectory_id, env, resume_from);
    outcome.passes = machine.passes();
    if (auto const selected = machine.selection())
    {
        outcome.index = static_cast<std::size_t>(*selected);
        return outcome;
    }
    auto const& pool = machine.candidates();
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i)
    {
        if (outcome.passes[i] > outcome.passes[best] ||
            (outcome.passes[i] == outcome.passes[best] && shorter_diff_first(pool[i], pool[best])))
            best = i;
    }
    outcome.index = best;
    outcome.fell_back = true;
    outcome.trajectory.notes.push_back(
        fmt::format("no selection made; fallback chose candidate {} ({} test passes)", best, outcome.passes[best]));
    return outcome;
}

} // namespace scaleswe
