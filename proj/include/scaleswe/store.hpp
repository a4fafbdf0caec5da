// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace scaleswe
{

/// Directory tree of versioned JSON artifacts for one run:
///   config.json, ledger.json, reports/
///   instances/<id>/{context,trajectories,selection,metrics}/..., candidates.json, matrix.json
/// Writes go through a temp file and rename, serialized per path.
class RunStore
{
  public:
    explicit RunStore(fs::path root);

    [[nodiscard]] const fs::path& root() const { return _root; }
    [[nodiscard]] fs::path instance_path(const std::string& instance_id) const;

    [[nodiscard]] bool exists(const fs::path& relative) const;
    /// Payload of the document at `relative`; nullopt if absent.
    [[nodiscard]] std::optional<json> read(const fs::path& relative, std::string_view kind) const;
    void write(const fs::path& relative, std::string_view kind, const json& data);
    void write_text(const fs::path& relative, std::string_view text);
    [[nodiscard]] std::optional<std::string> read_text(const fs::path& relative) const;

  private:
    std::mutex& lock_for(const fs::path& relative);

    fs::path _root;
    std::mutex _table_mutex;
    std::map<std::string, std::unique_ptr<std::mutex>> _locks;
};

/// Artifact paths relative to the run root.
namespace artifact
{
fs::path relevance(const std::string& instance_id);
fs::path ranking(const std::string& instance_id);
fs::path context(const std::string& instance_id);
fs::path trajectory(const std::string& instance_id, std::string_view machine, int index);
fs::path selection_trajectory(const std::string& instance_id, std::string_view method);
fs::path candidates(const std::string& instance_id);
fs::path matrix(const std::string& instance_id);
fs::path selection(const std::string& instance_id, std::string_view method);
fs::path correctness(const std::string& instance_id);
fs::path truncated(const std::string& instance_id);
} // namespace artifact

} // namespace scaleswe
