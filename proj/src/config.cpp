// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/config.hpp>

#include <fmt/format.h>

#include <fstream>

namespace scaleswe
{

namespace
{

fs::path resolve(const fs::path& base, const std::string& value)
{
    auto const p = fs::path(value);
    return p.is_absolute() || base.empty() ? p : base / p;
}

BackendSpec backend_from_json(const json& j, const fs::path& base)
{
    auto spec = BackendSpec {};
    spec.kind = j.value("kind", spec.kind);
    if (spec.kind != "mock" && spec.kind != "http")
        throw ContractError(fmt::format("backend kind must be 'mock' or 'http', got '{}'", spec.kind));
    if (j.contains("playbook"))
    {
        auto const& pb = j.at("playbook");
        if (pb.is_array())
        {
            for (auto const& p: pb)
                spec.playbooks.push_back(resolve(base, p.get<std::string>()));
        }
        else
        {
            spec.playbooks.push_back(resolve(base, pb.get<std::string>()));
        }
    }
    spec.latency_ms = j.value("latency_ms", 0);
    spec.http.base_url = j.value("base_url", spec.http.base_url);
    spec.http.path = j.value("path", spec.http.path);
    spec.http.model = j.value("model", spec.http.model);
    spec.http.api_key_env = j.value("api_key_env", spec.http.api_key_env);
    spec.http.cache_control = j.value("cache_control", spec.http.cache_control);
    spec.http.timeout = std::chrono::seconds(j.value("timeout_s", static_cast<int>(spec.http.timeout.count())));
    if (j.contains("retry"))
    {
        auto const& r = j.at("retry");
        spec.retry.attempts = r.value("attempts", spec.retry.attempts);
        spec.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", 1000));
        spec.retry.factor = r.value("factor", spec.retry.factor);
    }
    if (j.contains("cassette_dir"))
        spec.cassette_dir = resolve(base, j.at("cassette_dir").get<std::string>());
    auto const mode = j.value("cassette_mode", std::string("record"));
    if (mode != "record" && mode != "replay")
        throw ContractError(fmt::format("cassette_mode must be 'record' or 'replay', got '{}'", mode));
    spec.cassette_mode = mode == "record" ? CassetteMode::record : CassetteMode::replay;
    return spec;
}

void validate_backend(const BackendSpec& spec, std::string_view stage)
{
    if (spec.kind == "mock" && spec.playbooks.empty())
        throw ContractError(fmt::format("{} backend: a mock backend needs at least one playbook", stage));
    if (spec.kind == "http" && (spec.http.base_url.empty() || spec.http.model.empty()))
        throw ContractError(fmt::format("{} backend: http needs base_url and model", stage));
    if (spec.retry.attempts < 1)
        throw ContractError(fmt::format("{} backend: retry attempts must be >= 1", stage));
}

} // namespace

void RunConfig::validate() const
{
    if (run_id.empty() || !is_safe_relative_path(run_id) || run_id.find('/') != std::string::npos)
        throw ContractError(fmt::format("run_id '{}' must be a plain directory name", run_id));
    if (dataset.empty())
        throw ContractError("config: dataset path is required");
    if (machines_per_instance < 1)
        throw ContractError("config: machines_per_instance must be >= 1");
    testing.validate();
    editing.validate();
    selection.validate();
    if (context.repetitions < 1 || context.cap < 0)
        throw ContractError("config: context repetitions must be >= 1 and cap >= 0");
    if (workers.instances < 1 || workers.machines < 1 || workers.backend_requests < 1 || workers.cells < 1)
        throw ContractError("config: every worker limit must be >= 1");
    validate_backend(scanner, "scanner");
    validate_backend(primary, "primary");
    prices.validate();
    if (relevance_local_compute)
        relevance_local_compute->validate();
    for (auto const k: analysis.ks)
    {
        if (k < 1 || k > machines_per_instance)
            throw ContractError(fmt::format("config: analysis k={} outside 1..{}", k, machines_per_instance));
    }
    for (auto const i: analysis.is)
    {
        if (i < 1 || i > editing.max_completions)
            throw ContractError(fmt::format("config: analysis i={} outside 1..{}", i, editing.max_completions));
    }
}

RunConfig RunConfig::from_json(const json& document, const fs::path& base_dir)
{
    if (!document.is_object())
        throw SchemaError("config must be a JSON object");
    if (document.value("schema_version", 0) != kSchemaVersion)
        throw SchemaError(fmt::format("config schema_version must be {}", kSchemaVersion));

    auto c = RunConfig {};
    c.run_id = document.value("run_id", c.run_id);
    c.dataset = resolve(base_dir, document.at("dataset").get<std::string>());
    c.store_root = resolve(base_dir, document.value("store_root", std::string("runs")));
    c.machines_per_instance = document.value("machines_per_instance", c.machines_per_instance);
    if (document.contains("testing"))
        c.testing = document.at("testing").get<MachineConfig>();
    if (document.contains("editing"))
        c.editing = document.at("editing").get<MachineConfig>();
    if (document.contains("selection"))
        c.selection = document.at("selection").get<MachineConfig>();
    if (document.contains("context"))
        c.context = document.at("context").get<ContextConfig>();
    if (document.contains("sandbox"))
    {
        c.sandbox = document.at("sandbox").get<SandboxConfig>();
        if (document.at("sandbox").contains("workspace_root"))
            c.sandbox.workspace_root = resolve(base_dir, c.sandbox.workspace_root.string());
    }
    if (document.contains("prices"))
        c.prices = document.at("prices").get<PriceTable>();
    if (document.contains("workers"))
    {
        auto const& w = document.at("workers");
        c.workers.instances = w.value("instances", c.workers.instances);
        c.workers.machines = w.value("machines", c.workers.machines);
        c.workers.backend_requests = w.value("backend_requests", c.workers.backend_requests);
        c.workers.cells = w.value("cells", c.workers.cells);
    }
    if (!document.contains("backends"))
        throw ContractError("config: 'backends' with 'primary' (and optionally 'scanner') is required");
    auto const& backends = document.at("backends");
    c.primary = backend_from_json(backends.at("primary"), base_dir);
    c.scanner = backends.contains("scanner") ? backend_from_json(backends.at("scanner"), base_dir) : c.primary;
    if (document.contains("prompts_dir"))
        c.prompts_dir = resolve(base_dir, document.at("prompts_dir").get<std::string>());
    if (document.contains("relevance_local_compute"))
        c.relevance_local_compute = document.at("relevance_local_compute").get<LocalComputeSpec>();
    if (document.contains("analysis"))
    {
        auto const& a = document.at("analysis");
        c.analysis.ks = a.value("ks", c.analysis.ks);
        c.analysis.is = a.value("is", c.analysis.is);
        c.analysis.samples = a.value("samples", c.analysis.samples);
        c.analysis.seed = a.value("seed", c.analysis.seed);
    }
    c.document = document;
    c.document.erase("store_root");
    c.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path)
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw ContractError(fmt::format("cannot read config {}", path.string()));
    auto document = json {};
    try
    {
        document = json::parse(in);
    }
    catch (const json::parse_error& e)
    {
        throw SchemaError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return from_json(document, fs::absolute(path).parent_path());
}

std::shared_ptr<ChatBackend> make_backend(const BackendSpec& spec, int max_in_flight, std::shared_ptr<MockBackend>* mock_out)
{
    auto base = std::shared_ptr<ChatBackend> {};
    if (spec.kind == "mock")
    {
        auto playbook = Playbook {};
        for (auto const& p: spec.playbooks)
            playbook.merge(Playbook::load(p));
        auto mock = std::make_shared<MockBackend>(std::move(playbook));
        mock->set_latency(std::chrono::milliseconds(spec.latency_ms));
        if (mock_out)
            *mock_out = mock;
        base = mock;
    }
    else
    {
        base = std::make_shared<HttpBackend>(spec.http);
    }
    if (spec.cassette_dir)
        base = std::make_shared<RecordingBackend>(base, *spec.cassette_dir, spec.cassette_mode);
    base = std::make_shared<RetryingBackend>(base, spec.retry);
    return std::make_shared<ThrottledBackend>(base, max_in_flight);
}

} // namespace scaleswe
