// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/store.hpp>

#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace scaleswe
{

RunStore::RunStore(fs::path root): _root(std::move(root))
{
    fs::create_directories(_root);
}

fs::path RunStore::instance_path(const std::string& instance_id) const
{
    return _root / "instances" / instance_id;
}

bool RunStore::exists(const fs::path& relative) const
{
    std::error_code ec;
    return fs::is_regular_file(_root / relative, ec);
}

std::optional<std::string> RunStore::read_text(const fs::path& relative) const
{
    auto in = std::ifstream(_root / relative, std::ios::binary);
    if (!in)
        return std::nullopt;
    auto buffer = std::ostringstream {};
    buffer << in.rdbuf();
    return buffer.str();
}

std::optional<json> RunStore::read(const fs::path& relative, std::string_view kind) const
{
    auto const text = read_text(relative);
    if (!text)
        return std::nullopt;
    auto document = json {};
    try
    {
        document = json::parse(*text);
    }
    catch (const json::parse_error& e)
    {
        throw SchemaError(fmt::format("{}: {}", relative.string(), e.what()));
    }
    return std::optional<json>(std::in_place, document_payload(document, kind));
}

std::mutex& RunStore::lock_for(const fs::path& relative)
{
    auto lock = std::scoped_lock(_table_mutex);
    auto& slot = _locks[relative.generic_string()];
    if (!slot)
        slot = std::make_unique<std::mutex>();
    return *slot;
}

void RunStore::write_text(const fs::path& relative, std::string_view text)
{
    auto lock = std::scoped_lock(lock_for(relative));
    auto const target = _root / relative;
    fs::create_directories(target.parent_path());
    auto const tmp = fs::path(target.string() + ".tmp");
    {
        auto out = std::ofstream(tmp, std::ios::binary | std::ios::trunc);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.flush();
        if (!out)
            throw std::runtime_error(fmt::format("writing {} failed", tmp.string()));
    }
    fs::rename(tmp, target);
}

void RunStore::write(const fs::path& relative, std::string_view kind, const json& data)
{
    write_text(relative, dump_document(make_document(kind, data)));
}

namespace artifact
{

fs::path relevance(const std::string& id)
{
    return fs::path("instances") / id / "context" / "relevance.json";
}

fs::path ranking(const std::string& id)
{
    return fs::path("instances") / id / "context" / "ranking.json";
}

fs::path context(const std::string& id)
{
    return fs::path("instances") / id / "context" / "context.json";
}

fs::path trajectory(const std::string& id, std::string_view machine, int index)
{
    return fs::path("instances") / id / "trajectories" / fmt::format("{}-{:02}.json", machine, index);
}

fs::path selection_trajectory(const std::string& id, std::string_view method)
{
    return fs::path("instances") / id / "trajectories" / fmt::format("selection-{}.json", method);
}

fs::path candidates(const std::string& id)
{
    return fs::path("instances") / id / "candidates.json";
}

fs::path matrix(const std::string& id)
{
    return fs::path("instances") / id / "matrix.json";
}

fs::path selection(const std::string& id, std::string_view method)
{
    return fs::path("instances") / id / "selection" / fmt::format("{}.json", method);
}

fs::path correctness(const std::string& id)
{
    return fs::path("instances") / id / "metrics" / "correctness.json";
}

fs::path truncated(const std::string& id)
{
    return fs::path("instances") / id / "metrics" / "truncated.json";
}

} // namespace artifact

} // namespace scaleswe
