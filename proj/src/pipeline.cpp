// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/parallel.hpp>
#include <scaleswe/pipeline.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace scaleswe
{

namespace
{

constexpr std::string_view kTesting = "testing";
constexpr std::string_view kEditing = "editing";

std::string read_file(const fs::path& path)
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw ContractError(fmt::format("cannot read {}", path.string()));
    auto buffer = std::ostringstream {};
    buffer << in.rdbuf();
    return buffer.str();
}

std::string machine_trajectory_id(const std::string& instance_id, std::string_view machine, int index)
{
    return fmt::format("{}/{}/{:02}", instance_id, machine, index);
}

enum class Unit
{
    completed,
    skipped,
};

/// Runs `fn` per instance on `workers` threads, folding results into `report`.
template <typename Fn>
void for_each_instance(StageReport& report, const std::vector<Instance>& instances, int workers, Fn&& fn)
{
    auto mutex = std::mutex {};
    report.scheduled += static_cast<int>(instances.size());
    parallel_for(instances.size(), workers, [&](std::size_t i) {
        auto const& instance = instances[i];
        try
        {
            auto const result = fn(instance);
            auto lock = std::scoped_lock(mutex);
            (result == Unit::completed ? report.completed : report.skipped) += 1;
        }
        catch (const std::exception& e)
        {
            auto lock = std::scoped_lock(mutex);
            report.failures.push_back(fmt::format("{}: {}", instance.instance_id, e.what()));
        }
    });
    std::sort(report.failures.begin(), report.failures.end());
}

std::vector<CandidateSample> read_candidates(const RunStore& store, const std::string& id)
{
    auto const doc = store.read(artifact::candidates(id), "candidates");
    if (!doc)
        throw ContractError("missing prerequisite: candidates (run generate first)");
    return doc->at("candidates").get<std::vector<CandidateSample>>();
}

RankedContext read_context(const RunStore& store, const std::string& id)
{
    auto const doc = store.read(artifact::context(id), "context");
    if (!doc)
        throw ContractError("missing prerequisite: context (run context first)");
    return doc->get<RankedContext>();
}

std::optional<Trajectory> read_trajectory(const RunStore& store, const fs::path& path)
{
    auto const doc = store.read(path, "trajectory");
    if (!doc)
        return std::nullopt;
    return doc->get<Trajectory>();
}

std::string edit_identity(const Edit& edit)
{
    auto copy = edit;
    copy.unified_diff.clear();
    return json(copy).dump();
}

TokenUsage assistant_usage(const Trajectory& t, std::optional<int> up_to_completion = std::nullopt)
{
    auto total = TokenUsage {};
    int seen = 0;
    for (auto const& turn: t.turns)
    {
        if (turn.role != Role::assistant)
            continue;
        ++seen;
        if (up_to_completion && seen > *up_to_completion)
            break;
        total += turn.usage;
    }
    return total;
}

void write_selection_report(RunStore& store, const std::vector<Instance>& instances, SelectionMethod method)
{
    auto records = json::array();
    for (auto const& instance: instances)
    {
        auto const doc = store.read(artifact::selection(instance.instance_id, to_string(method)), "selection");
        if (!doc)
            continue;
        auto const record = doc->get<SelectionRecord>();
        records.push_back({{"instance_id", record.instance_id},
                           {"patch", record.patch},
                           {"method", record.method},
                           {"provenance",
                            {{"candidate_id", record.candidate_id},
                             {"source", record.source},
                             {"considered", record.considered},
                             {"trajectory_id", record.trajectory_id ? json(*record.trajectory_id) : json(nullptr)},
                             {"fell_back", record.fell_back}}}});
    }
    store.write(fs::path("reports") / fmt::format("selections-{}.json", to_string(method)), "selections", records);
}

} // namespace

Instance load_instance_descriptor(const fs::path& path)
{
    auto document = json {};
    try
    {
        document = json::parse(read_file(path));
    }
    catch (const json::parse_error& e)
    {
        throw SchemaError(fmt::format("{}: {}", path.string(), e.what()));
    }
    if (document.value("schema_version", 0) != kSchemaVersion)
        throw SchemaError(fmt::format("{}: schema_version must be {}", path.string(), kSchemaVersion));

    auto const dir = fs::absolute(path).parent_path();
    auto instance = Instance {};
    instance.instance_id = document.at("instance_id").get<std::string>();
    if (document.contains("issue_text"))
        instance.issue_text = document.at("issue_text").get<std::string>();
    else if (document.contains("issue_file"))
        instance.issue_text = normalize_newlines(read_file(dir / document.at("issue_file").get<std::string>()));
    auto const snapshot = fs::path(document.at("snapshot").get<std::string>());
    instance.codebase_ref = snapshot.is_absolute() ? snapshot : dir / snapshot;
    instance.instance_dir = dir;
    if (document.contains("source_file_filter"))
        instance.source_file_filter = document.at("source_file_filter").get<SourceFileFilter>();
    if (document.contains("gold_edit_files"))
        instance.gold_edit_files = document.at("gold_edit_files").get<std::vector<std::string>>();
    if (document.contains("oracle"))
        instance.oracle_eval = document.at("oracle").get<OracleEval>();
    if (instance.instance_id.find('/') != std::string::npos || !is_safe_relative_path(instance.instance_id))
        throw ContractError(fmt::format("{}: instance_id '{}' must be a plain name", path.string(), instance.instance_id));
    instance.validate();
    return instance;
}

std::vector<Instance> load_dataset(const fs::path& dir)
{
    std::error_code ec;
    if (!fs::is_directory(dir, ec))
        throw ContractError(fmt::format("dataset '{}' is not a directory", dir.string()));
    auto instances = std::vector<Instance> {};
    for (auto const& entry: fs::directory_iterator(dir))
    {
        if (entry.is_directory() && fs::is_regular_file(entry.path() / "instance.json"))
            instances.push_back(load_instance_descriptor(entry.path() / "instance.json"));
        else if (entry.is_regular_file() && entry.path().extension() == ".json")
            instances.push_back(load_instance_descriptor(entry.path()));
    }
    std::sort(instances.begin(), instances.end(), [](const Instance& a, const Instance& b) {
        return a.instance_id < b.instance_id;
    });
    for (std::size_t i = 1; i < instances.size(); ++i)
    {
        if (instances[i].instance_id == instances[i - 1].instance_id)
            throw ContractError(fmt::format("duplicate instance_id '{}'", instances[i].instance_id));
    }
    return instances;
}

std::string StageReport::text() const
{
    auto out = fmt::format("{}: {} scheduled, {} completed, {} skipped, {} failed\n",
                           stage,
                           scheduled,
                           completed,
                           skipped,
                           failures.size());
    for (auto const& f: failures)
        out += fmt::format("  failed {}\n", f);
    for (auto const& n: notes)
        out += fmt::format("  note {}\n", n);
    return out;
}

Pipeline::Pipeline(RunConfig config, PipelineOptions options):
    _config(std::move(config)), _options(std::move(options)), _sandbox(_config.sandbox)
{
    _config.validate();
    _instances = load_dataset(_config.dataset);
    if (_options.limit && *_options.limit >= 0 && static_cast<std::size_t>(*_options.limit) < _instances.size())
        _instances.resize(static_cast<std::size_t>(*_options.limit));
    _store = std::make_unique<RunStore>(_options.store_root.value_or(_config.store_root) / _config.run_id);
    if (_config.prompts_dir)
        _prompts.load_overrides(*_config.prompts_dir);

    _primary = make_backend(_config.primary, _config.workers.backend_requests, &_primary_mock);
    auto const shared = !_config.document.contains("backends") || !_config.document.at("backends").contains("scanner");
    if (shared)
    {
        _scanner = _primary;
        _scanner_mock = _primary_mock;
    }
    else
    {
        _scanner = make_backend(_config.scanner, _config.workers.backend_requests, &_scanner_mock);
    }
    for (auto const& mock: {_primary_mock, _scanner_mock})
    {
        if (mock)
            mock->set_abort_after_calls(_options.abort_after_calls);
    }
    _store->write("config.json", "run_config", _config.document);
}

MachineEnv Pipeline::env(ChatBackend& backend, const MachineConfig& config, TrajectorySink sink) const
{
    return MachineEnv {backend, _sandbox, _prompts, config, std::move(sink)};
}

StageReport Pipeline::context()
{
    auto report = StageReport {"context"};
    for_each_instance(report, _instances, _config.workers.instances, [&](const Instance& instance) {
        auto const& id = instance.instance_id;
        if (!_options.force && _store->exists(artifact::context(id)))
            return Unit::skipped;

        auto scan = RelevanceScan {};
        auto stored_scan = _options.force ? std::nullopt : _store->read(artifact::relevance(id), "relevance");
        if (stored_scan)
        {
            scan = stored_scan->get<RelevanceScan>();
        }
        else
        {
            scan = scan_relevance(instance, *_scanner, _counter, _prompts, _config.context);
            _store->write(artifact::relevance(id), "relevance", scan);
        }

        auto const any_relevant =
            std::any_of(scan.verdicts.begin(), scan.verdicts.end(), [](const RelevanceVerdict& v) { return v.relevant; });
        auto ranking = Ranking {};
        auto stored_ranking = _options.force ? std::nullopt : _store->read(artifact::ranking(id), "ranking");
        if (stored_ranking)
        {
            ranking = stored_ranking->get<Ranking>();
        }
        else
        {
            if (any_relevant)
                ranking = rank_files(instance, scan.verdicts, *_primary, _prompts, _config.context);
            _store->write(artifact::ranking(id), "ranking", ranking);
        }
        auto const context = assemble_context(ranking.order, _config.context.cap, scan.total_scanned_tokens);
        _store->write(artifact::context(id), "context", context);
        return Unit::completed;
    });
    return report;
}

StageReport Pipeline::generate()
{
    auto report = StageReport {"generate"};
    auto const n = _config.machines_per_instance;

    struct Job
    {
        const Instance* instance;
        int machine;
    };
    auto pending = std::vector<const Instance*> {};
    auto contexts = std::map<std::string, RankedContext> {};
    for (auto const& instance: _instances)
    {
        ++report.scheduled;
        if (!_options.force && _store->exists(artifact::candidates(instance.instance_id)))
        {
            ++report.skipped;
            continue;
        }
        try
        {
            contexts.emplace(instance.instance_id, read_context(*_store, instance.instance_id));
            pending.push_back(&instance);
        }
        catch (const std::exception& e)
        {
            report.failures.push_back(fmt::format("{}: {}", instance.instance_id, e.what()));
        }
    }

    auto jobs = std::vector<Job> {};
    for (auto const* instance: pending)
    {
        for (int m = 0; m < n; ++m)
            jobs.push_back({instance, m});
    }

    auto mutex = std::mutex {};
    auto unit_errors = std::map<std::string, std::string> {};
    auto unit_notes = std::map<std::string, std::vector<std::string>> {};
    parallel_for(jobs.size(), _config.workers.machines, [&](std::size_t j) {
        auto const& instance = *jobs[j].instance;
        auto const& id = instance.instance_id;
        auto const m = jobs[j].machine;
        try
        {
            auto run = [&](std::string_view machine, auto&& body) {
                auto const path = artifact::trajectory(id, machine, m);
                auto stored = _options.force ? std::nullopt : read_trajectory(*_store, path);
                if (stored && !resumable(*stored))
                    return *stored;
                auto sink = [&, path](const Trajectory& t) { _store->write(path, "trajectory", t); };
                auto result = body(stored ? &*stored : nullptr, sink);
                _store->write(path, "trajectory", result);
                return result;
            };

            auto const testing = run(kTesting, [&](const Trajectory* resume, TrajectorySink sink) {
                return run_testing_machine(instance,
                                           machine_trajectory_id(id, kTesting, m),
                                           env(*_primary, _config.testing, std::move(sink)),
                                           resume);
            });
            auto const* final = testing.final_snapshot();
            if (!final || !final->test)
            {
                auto lock = std::scoped_lock(mutex);
                unit_notes[id].push_back(fmt::format("machine {:02}: testing machine produced no test", m));
                return;
            }
            (void)run(kEditing, [&](const Trajectory* resume, TrajectorySink sink) {
                return run_editing_machine(instance,
                                           contexts.at(id),
                                           testing,
                                           machine_trajectory_id(id, kEditing, m),
                                           env(*_primary, _config.editing, std::move(sink)),
                                           resume);
            });
        }
        catch (const std::exception& e)
        {
            auto lock = std::scoped_lock(mutex);
            auto& slot = unit_errors[id];
            if (slot.empty())
                slot = fmt::format("machine {:02}: {}", m, e.what());
        }
    });

    for (auto const* instance: pending)
    {
        auto const& id = instance->instance_id;
        if (auto const it = unit_errors.find(id); it != unit_errors.end())
        {
            report.failures.push_back(fmt::format("{}: {}", id, it->second));
            continue;
        }
        auto candidates = std::vector<CandidateSample> {};
        auto notes = unit_notes[id];
        for (int m = 0; m < n; ++m)
        {
            auto const editing = read_trajectory(*_store, artifact::trajectory(id, kEditing, m));
            if (!editing)
                continue;
            auto const* final = editing->final_snapshot();
            if (!final || !final->edit)
            {
                notes.push_back(fmt::format("machine {:02}: editing machine produced no edit", m));
                continue;
            }
            auto sample = CandidateSample {};
            sample.instance_id = id;
            sample.candidate_id = fmt::format("{}/m{:02}", id, m);
            sample.edit = *final->edit;
            if (sample.edit.unified_diff.empty())
                sample.edit.unified_diff = _sandbox.render_edit(instance->codebase_ref, sample.edit).unified_diff;
            sample.test = final->test;
            sample.trajectory_id = editing->trajectory_id;
            candidates.push_back(std::move(sample));
        }
        _store->write(artifact::candidates(id), "candidates", json {{"candidates", candidates}, {"notes", notes}});
        for (auto const& note: notes)
            report.notes.push_back(fmt::format("{}: {}", id, note));
        ++report.completed;
    }
    std::sort(report.failures.begin(), report.failures.end());
    return report;
}

StageReport Pipeline::select(SelectionMethod method)
{
    if (method == SelectionMethod::ensemble)
        throw ContractError("use ensemble-select for ensemble selection");
    auto report = StageReport {fmt::format("select {}", to_string(method))};
    auto const needs_matrix = method != SelectionMethod::model;
    auto const needs_context = method == SelectionMethod::model || method == SelectionMethod::model_top3;

    for_each_instance(report, _instances, _config.workers.instances, [&](const Instance& instance) {
        auto const& id = instance.instance_id;
        auto const out = artifact::selection(id, to_string(method));
        if (!_options.force && _store->exists(out))
            return Unit::skipped;
        auto const candidates = read_candidates(*_store, id);
        if (candidates.empty())
            throw ContractError("no candidates to select from");
        auto context = std::optional<RankedContext> {};
        if (needs_context)
            context = read_context(*_store, id);

        auto matrix = std::optional<VoteMatrix> {};
        if (needs_matrix)
        {
            if (auto const stored = _store->read(artifact::matrix(id), "vote_matrix"); stored && !_options.force)
            {
                matrix = stored->get<VoteMatrix>();
            }
            else
            {
                auto tests = std::vector<TestScript> {};
                for (auto const& c: candidates)
                {
                    if (c.test)
                        tests.push_back(*c.test);
                }
                matrix = build_vote_matrix(instance, candidates, tests, _sandbox, _config.workers.cells);
                _store->write(artifact::matrix(id), "vote_matrix", *matrix);
            }
        }

        auto const trajectory_path = artifact::selection_trajectory(id, to_string(method));
        auto const resume = _options.force ? std::nullopt : read_trajectory(*_store, trajectory_path);
        auto sink = [&](const Trajectory& t) { _store->write(trajectory_path, "trajectory", t); };
        auto const result = select_candidate(instance,
                                             candidates,
                                             matrix ? &*matrix : nullptr,
                                             context ? &*context : nullptr,
                                             method,
                                             env(*_primary, _config.selection, sink),
                                             resume ? &*resume : nullptr);
        if (result.trajectory)
            _store->write(trajectory_path, "trajectory", *result.trajectory);
        _store->write(out, "selection", result.record);
        return Unit::completed;
    });

    write_selection_report(*_store, _instances, method);
    return report;
}

StageReport Pipeline::ensemble_select(const std::vector<fs::path>& prediction_files)
{
    auto report = StageReport {"ensemble-select"};
    auto records = std::vector<PredictionRecord> {};
    for (auto const& file: prediction_files)
    {
        auto const loaded = load_prediction_file(file);
        records.insert(records.end(), loaded.begin(), loaded.end());
    }
    auto const pool = ingest_ensemble(records);
    for (auto const& d: pool.dropped)
        report.notes.push_back(d);

    for_each_instance(report, _instances, _config.workers.instances, [&](const Instance& instance) {
        auto const& id = instance.instance_id;
        auto const method = to_string(SelectionMethod::ensemble);
        auto const out = artifact::selection(id, method);
        if (!_options.force && _store->exists(out))
            return Unit::skipped;
        auto const native_doc = _store->read(artifact::selection(id, to_string(SelectionMethod::machine_top3)), "selection");
        if (!native_doc)
            throw ContractError("missing prerequisite: native machine_top3 selection");
        auto const native_record = native_doc->get<SelectionRecord>();
        auto const candidates = read_candidates(*_store, id);
        auto const native = std::find_if(candidates.begin(), candidates.end(), [&](const CandidateSample& c) {
            return c.candidate_id == native_record.candidate_id;
        });
        if (native == candidates.end())
            throw ContractError(fmt::format("native selection '{}' is not among the candidates", native_record.candidate_id));

        auto external = std::vector<CandidateSample> {};
        if (auto const it = pool.by_instance.find(id); it != pool.by_instance.end())
            external = it->second;

        auto const trajectory_path = artifact::selection_trajectory(id, method);
        auto const resume = _options.force ? std::nullopt : read_trajectory(*_store, trajectory_path);
        auto sink = [&](const Trajectory& t) { _store->write(trajectory_path, "trajectory", t); };
        auto const result = scaleswe::ensemble_select(instance,
                                                      *native,
                                                      external,
                                                      env(*_primary, _config.selection, sink),
                                                      resume ? &*resume : nullptr);
        if (result.trajectory)
            _store->write(trajectory_path, "trajectory", *result.trajectory);
        _store->write(out, "selection", result.record);
        return Unit::completed;
    });
    write_selection_report(*_store, _instances, SelectionMethod::ensemble);
    return report;
}

namespace
{

struct InstanceMetrics
{
    std::vector<std::string> candidate_ids;
    std::vector<bool> correct;
    std::map<std::string, bool> selection_correct;
    std::map<std::string, std::size_t> selection_index;
    std::optional<bool> recall;
    std::optional<SweepInstance> sweep;
};

} // namespace

StageReport Pipeline::analyze()
{
    auto report = StageReport {"analyze"};
    auto metrics = std::vector<std::optional<InstanceMetrics>>(_instances.size());
    auto const max_iterations = _config.editing.max_completions;
    auto const methods = std::vector<SelectionMethod> {SelectionMethod::majority,
                                                       SelectionMethod::model,
                                                       SelectionMethod::model_top3,
                                                       SelectionMethod::machine_top3,
                                                       SelectionMethod::ensemble};

    auto index_of = std::map<std::string, std::size_t> {};
    for (std::size_t i = 0; i < _instances.size(); ++i)
        index_of[_instances[i].instance_id] = i;

    for_each_instance(report, _instances, _config.workers.instances, [&](const Instance& instance) {
        auto const& id = instance.instance_id;
        if (!instance.oracle_eval)
            throw ContractError("no oracle configured; correctness cannot be measured");
        auto const candidates = read_candidates(*_store, id);
        auto m = InstanceMetrics {};

        auto verdicts = std::map<std::string, bool> {};
        auto evaluate = [&](const Edit& edit) {
            auto const key = edit_identity(edit);
            if (auto const it = verdicts.find(key); it != verdicts.end())
                return it->second;
            auto const verdict = _sandbox.evaluate_candidate(instance, edit).correct;
            verdicts.emplace(key, verdict);
            return verdict;
        };

        if (auto const stored = _options.force ? std::nullopt : _store->read(artifact::correctness(id), "correctness"))
        {
            stored->at("candidate_ids").get_to(m.candidate_ids);
            stored->at("correct").get_to(m.correct);
        }
        else
        {
            for (auto const& c: candidates)
            {
                m.candidate_ids.push_back(c.candidate_id);
                m.correct.push_back(evaluate(c.edit));
            }
            _store->write(artifact::correctness(id),
                          "correctness",
                          json {{"candidate_ids", m.candidate_ids}, {"correct", m.correct}});
        }

        for (auto const method: methods)
        {
            auto const doc = _store->read(artifact::selection(id, to_string(method)), "selection");
            if (!doc)
                continue;
            auto const record = doc->get<SelectionRecord>();
            auto const name = std::string(to_string(method));
            if (method != SelectionMethod::ensemble)
            {
                m.selection_correct[name] = m.correct.at(record.selected_index);
                m.selection_index[name] = record.selected_index;
                continue;
            }
            auto const native = std::find(m.candidate_ids.begin(), m.candidate_ids.end(), record.candidate_id);
            if (native != m.candidate_ids.end())
            {
                m.selection_correct[name] = m.correct[static_cast<std::size_t>(native - m.candidate_ids.begin())];
            }
            else
            {
                auto edit = Edit {};
                edit.patch = record.patch;
                m.selection_correct[name] = evaluate(edit);
            }
        }

        if (instance.gold_edit_files)
        {
            if (auto const ctx = _store->read(artifact::context(id), "context"))
                m.recall = compute_recall(ctx->get<RankedContext>(), *instance.gold_edit_files);
        }

        // Per-iteration truncations of every editing machine.
        auto truncated = _options.force ? std::nullopt : _store->read(artifact::truncated(id), "truncated");
        if (!truncated)
        {
            auto testing = std::vector<Trajectory> {};
            auto editing = std::vector<Trajectory> {};
            for (int k = 0; k < _config.machines_per_instance; ++k)
            {
                auto t = read_trajectory(*_store, artifact::trajectory(id, kTesting, k));
                auto e = read_trajectory(*_store, artifact::trajectory(id, kEditing, k));
                if (t && e && !e->iteration_snapshots.empty())
                {
                    testing.push_back(std::move(*t));
                    editing.push_back(std::move(*e));
                }
            }
            auto runs = json::array();
            auto cache = OutcomeCache {};
            for (int i = 1; !editing.empty() && i <= max_iterations; ++i)
            {
                auto pool = std::vector<CandidateSample> {};
                auto tests = std::vector<TestScript> {};
                auto correct = std::vector<bool> {};
                auto cost = std::vector<Picodollars> {};
                for (std::size_t k = 0; k < editing.size(); ++k)
                {
                    auto const* snap = truncate_at_iteration(editing[k], i);
                    auto sample = CandidateSample {};
                    sample.instance_id = id;
                    sample.candidate_id = editing[k].trajectory_id;
                    sample.edit = snap->edit.value_or(Edit {});
                    pool.push_back(sample);
                    tests.push_back(snap->test.value_or(TestScript {}));
                    correct.push_back(evaluate(sample.edit));
                    cost.push_back(usage_cost_pico(assistant_usage(testing[k]) + assistant_usage(editing[k], i),
                                                   _config.prices));
                }
                auto const matrix = build_vote_matrix(instance, pool, tests, _sandbox, _config.workers.cells, &cache);
                runs.push_back({{"matrix", matrix}, {"correct", correct}, {"machine_cost", cost}});
            }
            truncated = json {{"by_iteration", runs}};
            _store->write(artifact::truncated(id), "truncated", *truncated);
        }
        auto sweep_instance = SweepInstance {id, {}};
        for (auto const& run: truncated->at("by_iteration"))
        {
            sweep_instance.by_iteration.push_back({run.at("matrix").get<VoteMatrix>(),
                                                   run.at("correct").get<std::vector<bool>>(),
                                                   run.at("machine_cost").get<std::vector<Picodollars>>()});
        }
        m.sweep = std::move(sweep_instance);
        metrics[index_of.at(id)] = std::move(m);
        return Unit::completed;
    });

    // Dataset-level reports, merged in instance order.
    auto correctness = std::vector<std::vector<bool>> {};
    auto selections = std::map<std::string, std::vector<std::size_t>> {};
    auto method_complete = std::map<std::string, bool> {};
    auto scores = std::map<std::string, std::pair<int, int>> {};
    auto recall = std::vector<std::optional<bool>> {};
    auto sweep_instances = std::vector<SweepInstance> {};
    int no_candidates = 0;
    for (auto const method: methods)
        method_complete[std::string(to_string(method))] = true;

    for (auto const& m: metrics)
    {
        if (!m)
            continue;
        recall.push_back(m->recall);
        if (m->correct.empty())
        {
            ++no_candidates;
            continue;
        }
        correctness.push_back(m->correct);
        for (auto& [name, complete]: method_complete)
        {
            auto const it = m->selection_correct.find(name);
            if (it == m->selection_correct.end())
            {
                complete = false;
                continue;
            }
            auto& [hits, total] = scores[name];
            hits += it->second ? 1 : 0;
            ++total;
            if (auto const idx = m->selection_index.find(name); idx != m->selection_index.end())
                selections[name].push_back(idx->second);
        }
        if (m->sweep && !m->sweep->by_iteration.empty())
            sweep_instances.push_back(*m->sweep);
    }
    if (no_candidates > 0)
        report.notes.push_back(fmt::format("{} instance(s) without candidates excluded from coverage", no_candidates));

    auto summary = SubtaskSummary {};
    summary.instances = static_cast<int>(correctness.size());
    auto const dataset = dataset_recall(recall);
    if (dataset.counted > 0)
        summary.recall = dataset.fraction;
    summary.recall_counted = dataset.counted;
    summary.coverage = coverage(correctness);
    for (auto const& [name, counts]: scores)
    {
        if (method_complete[name] && counts.second > 0)
            summary.scores[name] = static_cast<double>(counts.first) / counts.second;
    }
    auto text = summary_text(summary);

    auto gap_selections = std::map<std::string, std::vector<std::size_t>> {};
    for (auto const& [name, picks]: selections)
    {
        if (method_complete[name] && picks.size() == correctness.size())
            gap_selections[name] = picks;
    }
    auto summary_json = json {{"instances", summary.instances},
                              {"coverage", summary.coverage},
                              {"scores", summary.scores},
                              {"recall", summary.recall ? json(*summary.recall) : json(nullptr)},
                              {"recall_counted", summary.recall_counted}};
    if (!correctness.empty())
    {
        auto const gap = selection_gap_report(correctness, gap_selections);
        text += "\n" + gap_report_text(gap);
        _store->write_text("reports/selection_gap.csv", gap_report_csv(gap));
        summary_json["selection_gap"] = gap;
    }

    if (!sweep_instances.empty())
    {
        auto ks = _config.analysis.ks;
        auto is = _config.analysis.is;
        auto n = _config.machines_per_instance;
        for (auto const& s: sweep_instances)
            n = std::min<int>(n, static_cast<int>(s.by_iteration.front().correct.size()));
        if (ks.empty())
        {
            for (int k = 1; k <= n; ++k)
                ks.push_back(k);
        }
        if (is.empty())
        {
            for (int i = 1; i <= max_iterations; ++i)
                is.push_back(i);
        }
        auto const result = sweep(sweep_instances, ks, is, _config.analysis.samples, _config.analysis.seed);
        _store->write_text("reports/sweep.csv", sweep_csv(result));
        summary_json["sweep_excluded"] = result.excluded;
        if (result.excluded > 0)
            report.notes.push_back(fmt::format("{} instance(s) excluded from part of the sweep", result.excluded));
    }
    _store->write("reports/summary.json", "summary", summary_json);
    _store->write_text("reports/summary.txt", text);
    report.output = text;
    return report;
}

void compute_ledger(const RunStore& store, const std::vector<Instance>& instances, const RunConfig& config, CostLedger& ledger)
{
    auto relevance_tokens = TokenUsage {};
    for (auto const& instance: instances)
    {
        auto const& id = instance.instance_id;
        if (auto const scan = store.read(artifact::relevance(id), "relevance"))
        {
            auto const usage = scan->get<RelevanceScan>().usage();
            if (config.relevance_local_compute)
                relevance_tokens += usage;
            else
                ledger.add_usage(Stage::relevance, usage);
        }
        if (auto const ranking = store.read(artifact::ranking(id), "ranking"))
        {
            auto const usage = ranking->get<Ranking>().usage;
            if (usage.total() > 0)
                ledger.add_usage(Stage::ranking, usage);
        }
        auto const dir = store.instance_path(id) / "trajectories";
        std::error_code ec;
        if (!fs::is_directory(dir, ec))
            continue;
        auto files = std::vector<fs::path> {};
        for (auto const& entry: fs::directory_iterator(dir))
        {
            if (entry.is_regular_file() && entry.path().extension() == ".json")
                files.push_back(entry.path().filename());
        }
        std::sort(files.begin(), files.end());
        for (auto const& file: files)
        {
            auto const name = file.string();
            auto const t = read_trajectory(store, fs::path("instances") / id / "trajectories" / file);
            if (!t)
                continue;
            auto const stage = name.starts_with("testing-")   ? Stage::gen_tests
                               : name.starts_with("editing-") ? Stage::gen_edits
                                                              : Stage::selection;
            ledger.add_usage(stage, assistant_usage(*t));
        }
    }
    if (config.relevance_local_compute && relevance_tokens.total() > 0)
    {
        auto spec = *config.relevance_local_compute;
        spec.total_tokens = static_cast<double>(relevance_tokens.total());
        ledger.add_amount(Stage::relevance, CostClass::local, dollars_to_pico(estimate_local_cost(spec).usd));
    }
}

StageReport Pipeline::costs()
{
    auto report = StageReport {"costs"};
    auto ledger = CostLedger(_config.prices);
    compute_ledger(*_store, _instances, _config, ledger);
    report.scheduled = static_cast<int>(_instances.size());
    if (ledger.empty())
    {
        report.failures.push_back("no recorded usage in the run store");
        return report;
    }
    auto const table = render_ledger(ledger);
    _store->write("ledger.json", "ledger", table.to_json());
    _store->write_text("reports/costs.txt", table.to_text());
    _store->write_text("reports/costs.csv", table.to_csv());
    report.completed = report.scheduled;
    report.output = table.to_text();
    return report;
}

StageReport Pipeline::export_selections(SelectionMethod method, const fs::path& out)
{
    auto report = StageReport {fmt::format("export {}", to_string(method))};
    auto records = json::array();
    for (auto const& instance: _instances)
    {
        ++report.scheduled;
        auto const doc = _store->read(artifact::selection(instance.instance_id, to_string(method)), "selection");
        if (!doc)
        {
            report.failures.push_back(fmt::format("{}: no {} selection", instance.instance_id, to_string(method)));
            continue;
        }
        auto const record = doc->get<SelectionRecord>();
        records.push_back({{"instance_id", record.instance_id}, {"patch", record.patch}});
        ++report.completed;
    }
    if (out.has_parent_path())
        fs::create_directories(out.parent_path());
    auto file = std::ofstream(out, std::ios::binary | std::ios::trunc);
    file << records.dump(2) << '\n';
    return report;
}

} // namespace scaleswe
