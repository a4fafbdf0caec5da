// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/pipeline.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <iostream>

using namespace scaleswe;

namespace
{

constexpr int kExitOk = 0;
constexpr int kExitFailures = 1;
constexpr int kExitUsage = 2;

struct Common
{
    std::string config;
    bool force = false;
    int limit = -1;
    int abort_after_calls = -1;
    std::string store;
};

void add_common(CLI::App& cmd, Common& common)
{
    cmd.add_option("-c,--config", common.config, "Run configuration file")->required()->check(CLI::ExistingFile);
    cmd.add_flag("--force", common.force, "Recompute outputs that already exist");
    cmd.add_option("--limit", common.limit, "Only the first N instances by id")->check(CLI::NonNegativeNumber);
    cmd.add_option("--store", common.store, "Override the run store root");
    cmd.add_option("--abort-after-calls", common.abort_after_calls)->group("");
}

Pipeline open_pipeline(const Common& common)
{
    auto options = PipelineOptions {};
    options.force = common.force;
    if (common.limit >= 0)
        options.limit = common.limit;
    if (common.abort_after_calls >= 0)
        options.abort_after_calls = common.abort_after_calls;
    if (!common.store.empty())
        options.store_root = common.store;
    return Pipeline(RunConfig::load(common.config), options);
}

int emit(const StageReport& report)
{
    if (!report.output.empty())
        std::cout << report.output;
    std::cerr << report.text();
    return report.ok() ? kExitOk : kExitFailures;
}

SelectionMethod parse_method(const std::string& name)
{
    return selection_method_from_string(name);
}

} // namespace

int main(int argc, char** argv)
{
    auto app = CLI::App {"Issue-resolution pipeline: context, generation, selection, analysis."};
    app.require_subcommand(1);

    auto common = Common {};
    auto method = std::string("machine_top3");
    auto methods = std::vector<std::string> {"majority", "machine_top3"};
    auto predictions = std::vector<std::string> {};
    auto out = std::string {};

    auto* context = app.add_subcommand("context", "Scan relevance, rank files, assemble context");
    auto* generate = app.add_subcommand("generate", "Run testing and editing machines");
    auto* select = app.add_subcommand("select", "Select one candidate per instance");
    select->add_option("-m,--method", method, "majority | model | model_top3 | machine_top3");
    auto* ensemble = app.add_subcommand("ensemble-select", "Select over native and external candidates");
    ensemble->add_option("-p,--predictions", predictions, "Prediction files (JSON array or JSONL)")
        ->required()
        ->check(CLI::ExistingFile);
    auto* analyze = app.add_subcommand("analyze", "Coverage, scores, scaling sweep, selection gap");
    auto* costs = app.add_subcommand("costs", "Recompute the cost ledger");
    auto* exporter = app.add_subcommand("export", "Write {instance_id, patch} submission records");
    exporter->add_option("-m,--method", method, "Selection method to export");
    exporter->add_option("-o,--out", out, "Output file")->required();
    auto* run = app.add_subcommand("run", "context, generate, select, analyze, costs");
    run->add_option("--methods", methods, "Selection methods to run")->delimiter(',');
    auto* validate = app.add_subcommand("validate-config", "Check a configuration and its dataset");
    auto* prompts = app.add_subcommand("export-prompts", "Write the built-in prompt templates");
    prompts->add_option("-o,--out", out, "Output directory")->required();

    for (auto* cmd: {context, generate, select, ensemble, analyze, costs, exporter, run, validate})
        add_common(*cmd, common);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        auto const code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try
    {
        if (prompts->parsed())
        {
            PromptLibrary {}.export_to(out);
            return kExitOk;
        }
        auto pipeline = open_pipeline(common);
        if (validate->parsed())
        {
            std::cout << fmt::format("ok: {} instance(s), run '{}'\n", pipeline.instances().size(), pipeline.config().run_id);
            return kExitOk;
        }
        if (context->parsed())
            return emit(pipeline.context());
        if (generate->parsed())
            return emit(pipeline.generate());
        if (select->parsed())
            return emit(pipeline.select(parse_method(method)));
        if (ensemble->parsed())
        {
            auto files = std::vector<fs::path>(predictions.begin(), predictions.end());
            return emit(pipeline.ensemble_select(files));
        }
        if (analyze->parsed())
            return emit(pipeline.analyze());
        if (costs->parsed())
            return emit(pipeline.costs());
        if (exporter->parsed())
            return emit(pipeline.export_selections(parse_method(method), out));
        if (run->parsed())
        {
            auto selected = std::vector<SelectionMethod> {};
            for (auto const& m: methods)
                selected.push_back(parse_method(m));
            auto status = emit(pipeline.context());
            status = std::max(status, emit(pipeline.generate()));
            for (auto const m: selected)
                status = std::max(status, emit(pipeline.select(m)));
            status = std::max(status, emit(pipeline.analyze()));
            status = std::max(status, emit(pipeline.costs()));
            return status;
        }
    }
    catch (const ContractError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const SchemaError& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailures;
    }
    return kExitOk;
}
