// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace scaleswe
{

/// Pluggable token counter. Budgets only need to be approximately right,
/// so the default is a byte heuristic; inject an exact tokenizer if needed.
class TokenCounter
{
  public:
    virtual ~TokenCounter() = default;
    [[nodiscard]] virtual std::int64_t count(std::string_view text) const = 0;
};

/// ceil(bytes / 4).
class ByteHeuristicCounter final: public TokenCounter
{
  public:
    [[nodiscard]] std::int64_t count(std::string_view text) const override
    {
        return static_cast<std::int64_t>((text.size() + 3) / 4);
    }
};

} // namespace scaleswe
