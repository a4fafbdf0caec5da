// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/actions.hpp>
#include <scaleswe/diff.hpp>
#include <scaleswe/parallel.hpp>
#include <scaleswe/selection.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

namespace scaleswe
{

void to_json(json& j, const VoteMatrix& v)
{
    j = json {{"candidate_ids", v.candidate_ids},
              {"diff_lengths", v.diff_lengths},
              {"outcome", v.outcome},
              {"pass_counts", v.pass_counts}};
}

void from_json(const json& j, VoteMatrix& v)
{
    j.at("candidate_ids").get_to(v.candidate_ids);
    j.at("diff_lengths").get_to(v.diff_lengths);
    j.at("outcome").get_to(v.outcome);
    j.at("pass_counts").get_to(v.pass_counts);
    if (v.diff_lengths.size() != v.candidate_ids.size() || v.outcome.size() != v.candidate_ids.size() ||
        v.pass_counts.size() != v.candidate_ids.size())
        throw SchemaError("vote matrix: row counts disagree");
}

VoteMatrix make_vote_matrix(const std::vector<CandidateSample>& candidates, std::vector<std::vector<TestOutcome>> outcome)
{
    if (outcome.size() != candidates.size())
        throw ContractError(fmt::format("vote matrix: {} rows for {} candidates", outcome.size(), candidates.size()));
    auto m = VoteMatrix {};
    for (auto const& c: candidates)
    {
        m.candidate_ids.push_back(c.candidate_id);
        m.diff_lengths.push_back(c.edit.diff_length());
    }
    for (auto const& row: outcome)
    {
        if (row.size() != outcome.front().size())
            throw ContractError("vote matrix: ragged rows");
        m.pass_counts.push_back(static_cast<int>(std::count(row.begin(), row.end(), TestOutcome::pass)));
    }
    m.outcome = std::move(outcome);
    return m;
}

namespace
{

std::string edit_key(const Edit& edit)
{
    auto copy = edit;
    copy.unified_diff.clear();
    return json(copy).dump();
}

/// True when candidate a ranks ahead of b.
bool ranks_before(const VoteMatrix& m, std::size_t a, std::size_t b)
{
    if (m.pass_counts[a] != m.pass_counts[b])
        return m.pass_counts[a] > m.pass_counts[b];
    if (m.diff_lengths[a] != m.diff_lengths[b])
        return m.diff_lengths[a] < m.diff_lengths[b];
    return m.candidate_ids[a] < m.candidate_ids[b];
}

} // namespace

VoteMatrix build_vote_matrix(const Instance& instance,
                             const std::vector<CandidateSample>& candidates,
                             const std::vector<TestScript>& tests,
                             const Sandbox& sandbox,
                             int workers,
                             OutcomeCache* cache)
{
    if (candidates.empty() || tests.empty())
        throw ContractError(fmt::format("{}: vote matrix needs candidates and tests", instance.instance_id));

    // Deduplicate rows and columns; the cells are deterministic.
    auto edit_slot = std::map<std::string, std::size_t> {};
    auto unique_edits = std::vector<Edit> {};
    auto row_of = std::vector<std::size_t> {};
    for (auto const& c: candidates)
    {
        auto const [it, inserted] = edit_slot.try_emplace(edit_key(c.edit), unique_edits.size());
        if (inserted)
            unique_edits.push_back(c.edit);
        row_of.push_back(it->second);
    }
    auto test_slot = std::map<std::string, std::size_t> {};
    auto unique_tests = std::vector<TestScript> {};
    auto col_of = std::vector<std::size_t> {};
    for (auto const& t: tests)
    {
        auto const [it, inserted] = test_slot.try_emplace(t.script_text, unique_tests.size());
        if (inserted)
            unique_tests.push_back(t);
        col_of.push_back(it->second);
    }

    auto const rows = unique_edits.size();
    auto const cols = unique_tests.size();
    auto applies = std::vector<char>(rows, 1);
    auto diffs = std::vector<std::string>(rows);
    for (std::size_t r = 0; r < rows; ++r)
    {
        auto const rendered = sandbox.render_edit(instance.codebase_ref, unique_edits[r]);
        applies[r] = rendered.ok() ? 1 : 0;
        diffs[r] = rendered.unified_diff;
    }

    auto row_keys = std::vector<std::string>(rows);
    for (auto const& [key, slot]: edit_slot)
        row_keys[slot] = key;
    auto cell_key = [&](std::size_t r, std::size_t c) { return row_keys[r] + '\x1f' + unique_tests[c].script_text; };

    auto cells = std::vector<TestOutcome>(rows * cols, TestOutcome::error);
    auto pending = std::vector<std::size_t> {};
    for (std::size_t cell = 0; cell < rows * cols; ++cell)
    {
        if (!applies[cell / cols])
            continue;
        if (cache)
        {
            auto const it = cache->find(cell_key(cell / cols, cell % cols));
            if (it != cache->end())
            {
                cells[cell] = it->second;
                continue;
            }
        }
        pending.push_back(cell);
    }
    parallel_for(pending.size(), workers, [&](std::size_t p) {
        auto const cell = pending[p];
        auto const r = cell / cols;
        auto const c = cell % cols;
        try
        {
            auto workspace = sandbox.materialize(instance);
            auto edit = unique_edits[r];
            if (!sandbox.apply_edit(workspace, edit).ok())
                return;
            cells[cell] = classify(sandbox.run_script(workspace, unique_tests[c]));
        }
        catch (const SandboxError&)
        {
            cells[cell] = TestOutcome::error;
        }
    });
    if (cache)
    {
        for (auto const cell: pending)
            cache->emplace(cell_key(cell / cols, cell % cols), cells[cell]);
    }

    auto outcome = std::vector<std::vector<TestOutcome>>(candidates.size(), std::vector<TestOutcome>(tests.size()));
    auto rendered = candidates;
    for (std::size_t i = 0; i < candidates.size(); ++i)
    {
        if (rendered[i].edit.unified_diff.empty())
            rendered[i].edit.unified_diff = diffs[row_of[i]];
        for (std::size_t j = 0; j < tests.size(); ++j)
            outcome[i][j] = cells[row_of[i] * cols + col_of[j]];
    }
    return make_vote_matrix(rendered, std::move(outcome));
}

std::size_t majority_winner(const VoteMatrix& matrix)
{
    if (matrix.candidates() == 0)
        throw ContractError("majority vote over an empty matrix");
    std::size_t best = 0;
    for (std::size_t i = 1; i < matrix.candidates(); ++i)
    {
        if (ranks_before(matrix, i, best))
            best = i;
    }
    return best;
}

double majority_expected_score(const VoteMatrix& matrix, const std::vector<bool>& correct)
{
    if (matrix.candidates() == 0 || correct.size() != matrix.candidates())
        throw ContractError("majority score: correctness must cover every candidate");
    auto const top = *std::max_element(matrix.pass_counts.begin(), matrix.pass_counts.end());
    int tied = 0;
    int hits = 0;
    for (std::size_t i = 0; i < matrix.candidates(); ++i)
    {
        if (matrix.pass_counts[i] == top)
        {
            ++tied;
            hits += correct[i] ? 1 : 0;
        }
    }
    return static_cast<double>(hits) / tied;
}

std::vector<std::size_t> top_k_filter(const VoteMatrix& matrix, std::size_t k)
{
    auto order = std::vector<std::size_t>(matrix.candidates());
    std::iota(order.begin(), order.end(), std::size_t {0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranks_before(matrix, a, b); });
    if (order.size() > k)
        order.resize(k);
    return order;
}

std::string_view to_string(SelectionMethod method)
{
    switch (method)
    {
        case SelectionMethod::majority: return "majority";
        case SelectionMethod::model: return "model";
        case SelectionMethod::model_top3: return "model_top3";
        case SelectionMethod::machine_top3: return "machine_top3";
        case SelectionMethod::ensemble: return "ensemble";
    }
    return "?";
}

SelectionMethod selection_method_from_string(std::string_view name)
{
    for (auto const m: {SelectionMethod::majority,
                        SelectionMethod::model,
                        SelectionMethod::model_top3,
                        SelectionMethod::machine_top3,
                        SelectionMethod::ensemble})
    {
        if (to_string(m) == name)
            return m;
    }
    throw ContractError(fmt::format("unknown selection method '{}'", name));
}

void to_json(json& j, const SelectionRecord& v)
{
    j = json {{"instance_id", v.instance_id},
              {"method", v.method},
              {"selected_index", v.selected_index},
              {"candidate_id", v.candidate_id},
              {"source", v.source},
              {"patch", v.patch},
              {"considered", v.considered},
              {"trajectory_id", v.trajectory_id ? json(*v.trajectory_id) : json(nullptr)},
              {"fell_back", v.fell_back},
              {"notes", v.notes}};
}

void from_json(const json& j, SelectionRecord& v)
{
    j.at("instance_id").get_to(v.instance_id);
    j.at("method").get_to(v.method);
    j.at("selected_index").get_to(v.selected_index);
    j.at("candidate_id").get_to(v.candidate_id);
    j.at("source").get_to(v.source);
    j.at("patch").get_to(v.patch);
    j.at("considered").get_to(v.considered);
    if (j.contains("trajectory_id") && !j.at("trajectory_id").is_null())
        v.trajectory_id = j.at("trajectory_id").get<std::string>();
    v.fell_back = j.value("fell_back", false);
    v.notes = j.value("notes", std::vector<std::string> {});
}

std::optional<int> parse_selection_reply(std::string_view reply)
{
    auto const parsed = parse_action(reply);
    if (parsed.ok() && parsed.action->kind == ActionKind::select)
        return parsed.action->selected_index;
    static auto const bare = std::regex(R"(\bselect\s*:?\s*(\d+))", std::regex::icase);
    auto const text = std::string(reply);
    auto match = std::smatch {};
    if (std::regex_search(text, match, bare))
        return std::stoi(match[1].str());
    return std::nullopt;
}

namespace
{

std::size_t shortest_diff(const std::vector<CandidateSample>& candidates)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
    {
        if (shorter_diff_first(candidates[i], candidates[best]))
            best = i;
    }
    return best;
}

std::vector<CandidateSample> rendered(const Sandbox& sandbox, const Instance& instance, std::vector<CandidateSample> pool)
{
    for (auto& c: pool)
    {
        if (c.edit.unified_diff.empty())
            c.edit.unified_diff = sandbox.render_edit(instance.codebase_ref, c.edit).unified_diff;
    }
    return pool;
}

} // namespace

ModelSelection model_select_single_turn(const Instance& instance,
                                        const std::vector<CandidateSample>& candidates,
                                        const RankedContext& context,
                                        const std::string& session,
                                        MachineEnv env)
{
    if (candidates.empty())
        throw ContractError(fmt::format("{}: model selection needs at least one candidate", instance.instance_id));
    auto const pool = rendered(env.sandbox, instance, candidates);
    auto out = ModelSelection {};
    auto& t = out.trajectory;
    t.trajectory_id = session;
    t.machine_kind = MachineKind::selection;
    t.turns.push_back({Role::user,
                       env.prompts.render("model_select",
                                          {{"issue", instance.issue_text},
                                           {"context", render_context_files(instance.codebase_ref, context.included_files)},
                                           {"candidates", render_candidates(env.sandbox, instance, pool)},
                                           {"last_index", std::to_string(pool.size() - 1)}}),
                       {},
                       std::nullopt});

    for (int attempt = 0; attempt < 2; ++attempt)
    {
        auto request = ChatRequest {};
        for (auto const& turn: t.turns)
            request.messages.push_back({turn.role, turn.content});
        request.temperature = env.config.temperature;
        request.max_output_tokens = env.config.max_output_tokens;
        request.cache_prefix_marker = t.turns.size();
        if (attempt > 0)
            request.previous_cache_marker = 1;
        request.session = session;
        request.sequence = attempt;
        auto response = ChatResponse {};
        try
        {
            response = complete(request, env.backend);
        }
        catch (const BackendError& e)
        {
            t.notes.push_back(fmt::format("backend failure: {}", e.what()));
            break;
        }
        ++t.completions_used;
        auto turn = Turn {Role::assistant, response.text, response.usage, std::nullopt};
        auto const index = parse_selection_reply(response.text);
        auto const valid = index && *index >= 0 && static_cast<std::size_t>(*index) < pool.size();
        if (valid)
        {
            turn.parsed_action = Action {ActionKind::select, std::nullopt, std::nullopt, *index};
            t.turns.push_back(std::move(turn));
            t.iteration_snapshots.push_back({std::nullopt, std::nullopt, *index});
            t.terminal_status = TerminalStatus::approved;
            out.index = static_cast<std::size_t>(*index);
            return out;
        }
        t.turns.push_back(std::move(turn));
        t.iteration_snapshots.push_back({});
        if (attempt == 0)
        {
            auto const error = index ? fmt::format("candidate {} does not exist", *index)
                                     : std::string("no candidate number found");
            t.turns.push_back({Role::user, env.prompts.render("correction", {{"error", error}}), {}, std::nullopt});
        }
    }
    out.index = shortest_diff(pool);
    out.fell_back = true;
    t.terminal_status = t.notes.empty() ? TerminalStatus::malformed_failure : TerminalStatus::backend_failure;
    t.notes.push_back(fmt::format("no usable selection; fell back to the shortest diff (candidate {})", out.index));
    return out;
}

std::optional<TestScript> example_test(const std::vector<CandidateSample>& candidates, const VoteMatrix& matrix)
{
    for (auto const index: top_k_filter(matrix, matrix.candidates()))
    {
        if (candidates.at(index).test)
            return candidates[index].test;
    }
    return std::nullopt;
}

SelectionResult select_candidate(const Instance& instance,
                                 const std::vector<CandidateSample>& candidates,
                                 const VoteMatrix* matrix,
                                 const RankedContext* context,
                                 SelectionMethod method,
                                 MachineEnv env,
                                 const Trajectory* resume_from)
{
    if (candidates.empty())
        throw ContractError(fmt::format("{}: no candidates to select from", instance.instance_id));
    auto const needs_matrix = method == SelectionMethod::majority || method == SelectionMethod::model_top3 ||
                              method == SelectionMethod::machine_top3;
    if (needs_matrix && (!matrix || matrix->candidates() != candidates.size()))
        throw ContractError(fmt::format("{}: {} selection needs a vote matrix over the candidates",
                                        instance.instance_id,
                                        to_string(method)));
    if ((method == SelectionMethod::model || method == SelectionMethod::model_top3) && !context)
        throw ContractError(fmt::format("{}: {} selection needs the ranked context", instance.instance_id, to_string(method)));
    if (method == SelectionMethod::ensemble)
        throw ContractError("ensemble selection goes through ensemble_select");

    auto result = SelectionResult {};
    auto& record = result.record;
    record.instance_id = instance.instance_id;
    record.method = method;
    auto const session = fmt::format("{}/selection/{}", instance.instance_id, to_string(method));

    auto considered = std::vector<std::size_t> {};
    if (method == SelectionMethod::model)
    {
        considered.resize(candidates.size());
        std::iota(considered.begin(), considered.end(), std::size_t {0});
    }
    else
    {
        considered = top_k_filter(*matrix, 3);
    }
    auto subset = std::vector<CandidateSample> {};
    for (auto const i: considered)
        subset.push_back(candidates[i]);

    std::size_t local = 0;
    switch (method)
    {
        case SelectionMethod::majority:
            considered.resize(candidates.size());
            std::iota(considered.begin(), considered.end(), std::size_t {0});
            record.selected_index = majority_winner(*matrix);
            break;
        case SelectionMethod::model:
        case SelectionMethod::model_top3: {
            auto chosen = model_select_single_turn(instance, subset, *context, session, env);
            local = chosen.index;
            record.fell_back = chosen.fell_back;
            record.trajectory_id = session;
            result.trajectory = std::move(chosen.trajectory);
            record.selected_index = considered[local];
            break;
        }
        case SelectionMethod::machine_top3: {
            auto const example = example_test(candidates, *matrix);
            if (!example)
                throw ContractError(fmt::format("{}: no candidate carries a test to use as the example", instance.instance_id));
            auto chosen = run_selection_machine(instance, subset, *example, session, env, resume_from);
            local = chosen.index;
            record.fell_back = chosen.fell_back;
            record.trajectory_id = session;
            result.trajectory = std::move(chosen.trajectory);
            record.selected_index = considered[local];
            break;
        }
        case SelectionMethod::ensemble: break;
    }
    record.considered = considered;
    auto const& winner = candidates[record.selected_index];
    record.candidate_id = winner.candidate_id;
    record.source = winner.source;
    record.patch = winner.edit.unified_diff.empty() ? env.sandbox.render_edit(instance.codebase_ref, winner.edit).unified_diff
                                                    : winner.edit.unified_diff;
    if (result.trajectory)
        record.notes = result.trajectory->notes;
    return result;
}

std::vector<PredictionRecord> load_prediction_file(const fs::path& path, const std::string& default_source)
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw ContractError(fmt::format("cannot read prediction file {}", path.string()));
    auto buffer = std::ostringstream {};
    buffer << in.rdbuf();
    auto const text = buffer.str();

    auto entries = std::vector<json> {};
    auto const first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[')
    {
        entries = json::parse(text).get<std::vector<json>>();
    }
    else
    {
        auto lines = std::istringstream(text);
        auto line = std::string {};
        while (std::getline(lines, line))
        {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                entries.push_back(json::parse(line));
        }
    }

    auto records = std::vector<PredictionRecord> {};
    auto const fallback_source = default_source.empty() ? path.stem().string() : default_source;
    for (auto const& e: entries)
    {
        auto r = PredictionRecord {};
        r.instance_id = e.at("instance_id").get<std::string>();
        if (e.contains("patch"))
            r.patch = e.at("patch").is_null() ? std::string {} : e.at("patch").get<std::string>();
        else if (e.contains("model_patch"))
            r.patch = e.at("model_patch").is_null() ? std::string {} : e.at("model_patch").get<std::string>();
        if (e.contains("source_name"))
            r.source_name = e.at("source_name").get<std::string>();
        else if (e.contains("model_name_or_path"))
            r.source_name = e.at("model_name_or_path").get<std::string>();
        else
            r.source_name = fallback_source;
        records.push_back(std::move(r));
    }
    return records;
}

EnsemblePool ingest_ensemble(const std::vector<PredictionRecord>& records)
{
    auto pool = EnsemblePool {};
    auto seen = std::set<std::string> {};
    for (auto const& r: records)
    {
        auto const id = fmt::format("{}/ext/{}", r.instance_id, r.source_name);
        if (!seen.insert(id).second)
        {
            pool.dropped.push_back(fmt::format("{}: duplicate prediction from the same source", id));
            continue;
        }
        auto const patch = normalize_newlines(r.patch);
        try
        {
            if (parse_unified_diff(patch).empty())
                throw SchemaError("patch touches no files");
        }
        catch (const SchemaError& e)
        {
            pool.dropped.push_back(fmt::format("{}: unparseable patch: {}", id, e.what()));
            continue;
        }
        auto sample = CandidateSample {};
        sample.instance_id = r.instance_id;
        sample.candidate_id = id;
        sample.edit.patch = patch;
        sample.edit.unified_diff = patch;
        sample.source = r.source_name;
        pool.by_instance[r.instance_id].push_back(std::move(sample));
    }
    for (auto& [_, list]: pool.by_instance)
    {
        std::sort(list.begin(), list.end(), [](const CandidateSample& a, const CandidateSample& b) {
            return a.candidate_id < b.candidate_id;
        });
    }
    return pool;
}

SelectionResult ensemble_select(const Instance& instance,
                                const CandidateSample& native,
                                const std::vector<CandidateSample>& external,
                                MachineEnv env,
                                const Trajectory* resume_from)
{
    if (!native.test)
        throw ContractError(fmt::format("{}: the native candidate carries no test", instance.instance_id));
    auto pool = std::vector<CandidateSample> {native};
    pool.insert(pool.end(), external.begin(), external.end());

    auto const session = fmt::format("{}/selection/ensemble", instance.instance_id);
    auto chosen = run_selection_machine(instance, pool, *native.test, session, env, resume_from);

    auto result = SelectionResult {};
    auto& record = result.record;
    record.instance_id = instance.instance_id;
    record.method = SelectionMethod::ensemble;
    record.selected_index = chosen.index;
    record.considered.resize(pool.size());
    std::iota(record.considered.begin(), record.considered.end(), std::size_t {0});
    record.trajectory_id = session;
    record.fell_back = chosen.fell_back;
    auto const& winner = pool[chosen.index];
    record.candidate_id = winner.candidate_id;
    record.source = winner.source;
    record.patch = winner.edit.unified_diff.empty() ? env.sandbox.render_edit(instance.codebase_ref, winner.edit).unified_diff
                                                    : winner.edit.unified_diff;
    if (chosen.fell_back)
        chosen.trajectory.notes.push_back("ensemble fallback reuses the native chain");
    record.notes = chosen.trajectory.notes;
    result.trajectory = std::move(chosen.trajectory);
    return result;
}

} // namespace scaleswe
