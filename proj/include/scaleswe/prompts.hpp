// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace scaleswe
{

using PromptValues = std::map<std::string, std::string>;

/// Named text templates with `{{placeholder}}` slots. Built-in defaults can
/// be overridden by `<name>.txt` files in a directory.
class PromptLibrary
{
  public:
    PromptLibrary();

    /// Replaces templates with any `<name>.txt` found in `dir`.
    void load_overrides(const fs::path& dir);
    /// Writes every template as `<name>.txt`.
    void export_to(const fs::path& dir) const;

    [[nodiscard]] const std::string& raw(std::string_view name) const;
    [[nodiscard]] std::vector<std::string> names() const;

    /// Substitutes placeholders; an unfilled placeholder is a ContractError.
    [[nodiscard]] std::string render(std::string_view name, const PromptValues& values) const;

  private:
    std::map<std::string, std::string, std::less<>> _templates;
};

/// Substitutes `{{key}}` occurrences in `text`.
[[nodiscard]] std::string fill_template(std::string_view text, const PromptValues& values);

} // namespace scaleswe
