// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/actions.hpp>

#include <fmt/format.h>

#include <charconv>

namespace scaleswe
{

namespace
{

std::vector<std::string_view> split_lines(std::string_view text)
{
    auto lines = std::vector<std::string_view> {};
    std::size_t start = 0;
    while (start <= text.size())
    {
        auto const nl = text.find('\n', start);
        if (nl == std::string_view::npos)
        {
            if (start < text.size())
                lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

bool is_action_tag(std::string_view tag)
{
    return tag == "test" || tag == "edit" || tag == "approve" || tag.starts_with("select");
}

constexpr std::string_view kFile = "@@@ FILE ";
constexpr std::string_view kSearch = "@@@ SEARCH";
constexpr std::string_view kReplace = "@@@ REPLACE";
constexpr std::string_view kEnd = "@@@ END";

} // namespace

std::vector<FencedBlock> fenced_blocks(std::string_view text)
{
    auto const normalized = normalize_newlines(text);
    auto const lines = split_lines(normalized);
    auto blocks = std::vector<FencedBlock> {};
    std::size_t i = 0;
    while (i < lines.size())
    {
        auto const line = trim(lines[i]);
        std::size_t ticks = 0;
        while (ticks < line.size() && line[ticks] == '`')
            ++ticks;
        if (ticks < 3)
        {
            ++i;
            continue;
        }
        auto const fence = line.substr(0, ticks);
        auto const tag = trim(line.substr(ticks));
        auto body = std::string {};
        std::size_t j = i + 1;
        bool closed = false;
        for (; j < lines.size(); ++j)
        {
            if (trim(lines[j]) == fence)
            {
                closed = true;
                break;
            }
            body.append(lines[j]);
            body += '\n';
        }
        if (!closed)
        {
            // An unterminated fence runs to the end of the reply.
            blocks.push_back({std::string(tag), std::move(body)});
            break;
        }
        blocks.push_back({std::string(tag), std::move(body)});
        i = j + 1;
    }
    return blocks;
}

std::vector<SearchReplaceBlock> parse_edit_body(std::string_view body)
{
    enum class State
    {
        outside,
        header,
        search,
        replace,
    };

    auto blocks = std::vector<SearchReplaceBlock> {};
    auto state = State::outside;
    auto current = SearchReplaceBlock {};
    int line_number = 0;
    for (auto const raw: split_lines(body))
    {
        ++line_number;
        auto const line = std::string_view(raw);
        auto const marker = trim(line);
        switch (state)
        {
            case State::outside:
                if (marker.empty())
                    break;
                if (!marker.starts_with(kFile))
                    throw SchemaError(fmt::format("edit line {}: expected '@@@ FILE <path>'", line_number));
                current = SearchReplaceBlock {};
                current.file_path = std::string(trim(marker.substr(kFile.size())));
                if (!is_safe_relative_path(current.file_path))
                    throw SchemaError(fmt::format("edit line {}: '{}' is not a relative path inside the repository",
                                                  line_number,
                                                  current.file_path));
                state = State::header;
                break;
            case State::header:
                if (marker.empty())
                    break;
                if (marker != kSearch)
                    throw SchemaError(fmt::format("edit line {}: expected '@@@ SEARCH'", line_number));
                state = State::search;
                break;
            case State::search:
                if (marker == kReplace)
                {
                    if (current.search_text.empty())
                        throw SchemaError(fmt::format("edit line {}: empty SEARCH section", line_number));
                    state = State::replace;
                    break;
                }
                if (marker.starts_with("@@@ "))
                    throw SchemaError(fmt::format("edit line {}: expected '@@@ REPLACE'", line_number));
                current.search_text.append(line);
                current.search_text += '\n';
                break;
            case State::replace:
                if (marker == kEnd)
                {
                    blocks.push_back(std::move(current));
                    state = State::outside;
                    break;
                }
                if (marker.starts_with("@@@ "))
                    throw SchemaError(fmt::format("edit line {}: expected '@@@ END'", line_number));
                current.replace_text.append(line);
                current.replace_text += '\n';
                break;
        }
    }
    if (state != State::outside)
        throw SchemaError("edit block ends inside an unterminated FILE section");
    if (blocks.empty())
        throw SchemaError("edit block contains no FILE sections");
    return blocks;
}

ActionParse parse_action(std::string_view reply)
{
    auto actions = std::vector<FencedBlock> {};
    for (auto& block: fenced_blocks(reply))
    {
        if (is_action_tag(block.tag))
            actions.push_back(std::move(block));
    }
    if (actions.empty())
        return {std::nullopt, "no action block found (expected one of ```test, ```edit, ```approve, ```select:N)"};
    if (actions.size() > 1)
        return {std::nullopt, fmt::format("found {} action blocks; reply with exactly one", actions.size())};

    auto const& block = actions.front();
    auto action = Action {};
    if (block.tag == "test")
    {
        if (block.body.find_first_not_of(" \t\r\n") == std::string::npos)
            return {std::nullopt, "the test block is empty"};
        action.kind = ActionKind::write_test;
        action.test = TestScript {block.body};
    }
    else if (block.tag == "edit")
    {
        try
        {
            action.kind = ActionKind::write_edit;
            action.edit = Edit {parse_edit_body(block.body), std::nullopt, {}};
        }
        catch (const SchemaError& e)
        {
            return {std::nullopt, e.what()};
        }
    }
    else if (block.tag == "approve")
    {
        action.kind = ActionKind::approve;
    }
    else
    {
        auto const tag = std::string_view(block.tag);
        if (!tag.starts_with("select:"))
            return {std::nullopt, fmt::format("'{}' is not a valid selection tag; use select:N", block.tag)};
        auto const digits = trim(tag.substr(7));
        int index = -1;
        auto const [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), index);
        if (ec != std::errc {} || ptr != digits.data() + digits.size() || digits.empty())
            return {std::nullopt, fmt::format("'{}' does not name a candidate number", block.tag)};
        action.kind = ActionKind::select;
        action.selected_index = index;
    }
    return {action, {}};
}

std::string render_edit_action(const std::vector<SearchReplaceBlock>& blocks)
{
    auto out = std::string("```edit\n");
    for (auto const& block: blocks)
    {
        out += fmt::format("{}{}\n{}\n", kFile, block.file_path, kSearch);
        out += block.search_text;
        if (!block.search_text.ends_with('\n'))
            out += '\n';
        out += kReplace;
        out += '\n';
        out += block.replace_text;
        if (!block.replace_text.empty() && !block.replace_text.ends_with('\n'))
            out += '\n';
        out += kEnd;
        out += '\n';
    }
    out += "```\n";
    return out;
}

std::string render_test_action(const TestScript& test)
{
    auto out = std::string("```test\n") + test.script_text;
    if (!test.script_text.ends_with('\n'))
        out += '\n';
    return out + "```\n";
}

} // namespace scaleswe
