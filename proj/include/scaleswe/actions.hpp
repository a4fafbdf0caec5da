// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>

#include <string>
#include <string_view>
#include <vector>

namespace scaleswe
{

/// A fenced block: opening line of 3+ backticks followed by a tag, closed
/// by a line holding exactly the same backticks.
struct FencedBlock
{
    std::string tag;
    std::string body;
};

[[nodiscard]] std::vector<FencedBlock> fenced_blocks(std::string_view text);

struct ActionParse
{
    std::optional<Action> action;
    /// Why the reply is malformed; empty on success.
    std::string error;

    [[nodiscard]] bool ok() const { return action.has_value(); }
};

/// Parses an assistant reply into exactly one action. Blocks with tags other
/// than test / edit / approve / select:N are ignored.
[[nodiscard]] ActionParse parse_action(std::string_view reply);

/// Parses the FILE / SEARCH / REPLACE / END grammar of an edit block.
/// Throws SchemaError describing the first violation.
[[nodiscard]] std::vector<SearchReplaceBlock> parse_edit_body(std::string_view body);

/// Inverse of parse_edit_body, wrapped in an ```edit fence.
[[nodiscard]] std::string render_edit_action(const std::vector<SearchReplaceBlock>& blocks);
[[nodiscard]] std::string render_test_action(const TestScript& test);

} // namespace scaleswe
