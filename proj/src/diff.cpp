// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/diff.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <set>

namespace scaleswe
{

namespace
{

constexpr int kContextLines = 3;
constexpr std::string_view kNoNewline = "\\ No newline at end of file";

/// Splits keeping the terminating '\n' on each line so a missing final
/// newline makes the last line compare unequal.
std::vector<std::string_view> split_keep(std::string_view text)
{
    auto lines = std::vector<std::string_view> {};
    std::size_t start = 0;
    while (start < text.size())
    {
        auto const nl = text.find('\n', start);
        if (nl == std::string_view::npos)
        {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start + 1));
        start = nl + 1;
    }
    return lines;
}

enum class Op
{
    equal,
    remove,
    insert,
};

struct DiffOp
{
    Op op;
    std::size_t a; // index into before
    std::size_t b; // index into after
};

std::vector<DiffOp> diff_lines(const std::vector<std::string_view>& a, const std::vector<std::string_view>& b)
{
    std::size_t prefix = 0;
    while (prefix < a.size() && prefix < b.size() && a[prefix] == b[prefix])
        ++prefix;
    std::size_t suffix = 0;
    while (suffix < a.size() - prefix && suffix < b.size() - prefix
           && a[a.size() - 1 - suffix] == b[b.size() - 1 - suffix])
        ++suffix;

    auto const n = a.size() - prefix - suffix;
    auto const m = b.size() - prefix - suffix;

    // LCS table over the changed middle region.
    auto table = std::vector<std::uint32_t>((n + 1) * (m + 1), 0);
    auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return table[i * (m + 1) + j]; };
    for (std::size_t i = n; i-- > 0;)
        for (std::size_t j = m; j-- > 0;)
            at(i, j) = a[prefix + i] == b[prefix + j] ? at(i + 1, j + 1) + 1 : std::max(at(i + 1, j), at(i, j + 1));

    auto ops = std::vector<DiffOp> {};
    for (std::size_t k = 0; k < prefix; ++k)
        ops.push_back({Op::equal, k, k});
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < n || j < m)
    {
        if (i < n && j < m && a[prefix + i] == b[prefix + j])
        {
            ops.push_back({Op::equal, prefix + i, prefix + j});
            ++i;
            ++j;
        }
        else if (j < m && (i == n || at(i, j + 1) > at(i + 1, j)))
        {
            ops.push_back({Op::insert, prefix + i, prefix + j});
            ++j;
        }
        else
        {
            ops.push_back({Op::remove, prefix + i, prefix + j});
            ++i;
        }
    }
    for (std::size_t k = 0; k < suffix; ++k)
        ops.push_back({Op::equal, a.size() - suffix + k, b.size() - suffix + k});
    return ops;
}

std::string range(std::size_t start, std::size_t count)
{
    // GNU convention: empty ranges name the line before, ",1" is implied.
    if (count == 0)
        return fmt::format("{},0", start);
    if (count == 1)
        return fmt::format("{}", start + 1);
    return fmt::format("{},{}", start + 1, count);
}

void emit_line(std::string& out, char prefix, std::string_view line)
{
    out += prefix;
    if (!line.empty() && line.back() == '\n')
    {
        out.append(line);
    }
    else
    {
        out.append(line);
        out += '\n';
        out.append(kNoNewline);
        out += '\n';
    }
}

std::string render_hunks(std::string_view before, std::string_view after)
{
    auto const a = split_keep(before);
    auto const b = split_keep(after);
    auto const ops = diff_lines(a, b);

    auto out = std::string {};
    std::size_t k = 0;
    while (k < ops.size())
    {
        if (ops[k].op == Op::equal)
        {
            ++k;
            continue;
        }
        // Grow a hunk from the first change, merging changes separated by
        // at most 2*context equal lines.
        auto const first = k >= static_cast<std::size_t>(kContextLines) ? k - kContextLines : 0;
        std::size_t last_change = k;
        std::size_t scan = k;
        while (scan < ops.size())
        {
            if (ops[scan].op != Op::equal)
            {
                last_change = scan;
                ++scan;
                continue;
            }
            auto run = scan;
            while (run < ops.size() && ops[run].op == Op::equal)
                ++run;
            if (run == ops.size() || run - scan > static_cast<std::size_t>(2 * kContextLines))
                break;
            scan = run;
        }
        auto const end = std::min(ops.size(), last_change + 1 + kContextLines);
        std::size_t old_count = 0;
        std::size_t new_count = 0;
        for (auto t = first; t < end; ++t)
        {
            if (ops[t].op != Op::insert)
                ++old_count;
            if (ops[t].op != Op::remove)
                ++new_count;
        }
        auto const old_start = ops[first].a;
        auto const new_start = ops[first].b;
        out += fmt::format("@@ -{} +{} @@\n", range(old_start, old_count), range(new_start, new_count));
        for (auto t = first; t < end; ++t)
        {
            switch (ops[t].op)
            {
                case Op::equal: emit_line(out, ' ', a[ops[t].a]); break;
                case Op::remove: emit_line(out, '-', a[ops[t].a]); break;
                case Op::insert: emit_line(out, '+', b[ops[t].b]); break;
            }
        }
        k = end;
    }
    return out;
}

} // namespace

std::string unified_diff(std::string_view path, std::string_view before, std::string_view after)
{
    if (before == after)
        return {};
    return fmt::format("diff --git a/{0} b/{0}\n--- a/{0}\n+++ b/{0}\n", path) + render_hunks(before, after);
}

std::string unified_diff(const FileMap& before, const FileMap& after)
{
    auto paths = std::set<std::string> {};
    for (auto const& [p, _]: before)
        paths.insert(p);
    for (auto const& [p, _]: after)
        paths.insert(p);

    auto out = std::string {};
    for (auto const& path: paths)
    {
        auto const b = before.find(path);
        auto const a = after.find(path);
        if (b != before.end() && a != after.end())
        {
            out += unified_diff(path, b->second, a->second);
        }
        else if (b == before.end())
        {
            out += fmt::format("diff --git a/{0} b/{0}\nnew file mode 100644\n--- /dev/null\n+++ b/{0}\n", path);
            out += render_hunks("", a->second);
        }
        else
        {
            out += fmt::format("diff --git a/{0} b/{0}\ndeleted file mode 100644\n--- a/{0}\n+++ /dev/null\n", path);
            out += render_hunks(b->second, "");
        }
    }
    return out;
}

std::string_view to_string(EditErrorKind kind)
{
    switch (kind)
    {
        case EditErrorKind::no_match: return "no_match";
        case EditErrorKind::ambiguous_match: return "ambiguous_match";
        case EditErrorKind::missing_file: return "missing_file";
        case EditErrorKind::invalid_block: return "invalid_block";
        case EditErrorKind::patch_malformed: return "patch_malformed";
        case EditErrorKind::patch_conflict: return "patch_conflict";
    }
    return "?";
}

std::string EditError::describe() const
{
    switch (kind)
    {
        case EditErrorKind::no_match:
            return fmt::format("no_match: search text of block {} was not found in {}", block, file_path);
        case EditErrorKind::ambiguous_match:
            return fmt::format("ambiguous_match: search text of block {} occurs {} times in {}; it must match exactly once",
                               block,
                               match_count,
                               file_path);
        case EditErrorKind::missing_file:
            return fmt::format("missing_file: block {} targets {}, which does not exist", block, file_path);
        default: return fmt::format("{}: {}", to_string(kind), message);
    }
}

int count_occurrences(std::string_view haystack, std::string_view needle)
{
    if (needle.empty())
        return 0;
    int count = 0;
    for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1))
        ++count;
    return count;
}

EditApplication apply_blocks(FileMap files,
                             const std::vector<SearchReplaceBlock>& blocks,
                             const std::function<std::optional<std::string>(const std::string&)>& load)
{
    auto original = FileMap {};
    auto working = files;
    auto fail = [&](EditError error) {
        return EditApplication {std::move(files), {}, std::move(error)};
    };

    for (std::size_t index = 0; index < blocks.size(); ++index)
    {
        auto const& block = blocks[index];
        auto const number = static_cast<int>(index + 1);
        if (block.search_text.empty() || !is_safe_relative_path(block.file_path))
        {
            return fail({EditErrorKind::invalid_block,
                         block.file_path,
                         number,
                         0,
                         fmt::format("block {} has an empty search text or an unsafe path '{}'", number, block.file_path)});
        }
        auto it = working.find(block.file_path);
        if (it == working.end())
        {
            auto loaded = load ? load(block.file_path) : std::nullopt;
            if (!loaded)
                return fail({EditErrorKind::missing_file, block.file_path, number, 0, {}});
            original.emplace(block.file_path, *loaded);
            it = working.emplace(block.file_path, std::move(*loaded)).first;
        }
        else if (!original.contains(block.file_path))
        {
            original.emplace(block.file_path, it->second);
        }

        auto& content = it->second;
        auto const search = normalize_newlines(block.search_text);
        auto const matches = count_occurrences(content, search);
        if (matches == 0)
            return fail({EditErrorKind::no_match, block.file_path, number, 0, {}});
        if (matches > 1)
            return fail({EditErrorKind::ambiguous_match, block.file_path, number, matches, {}});
        auto const pos = content.find(search);
        content.replace(pos, search.size(), normalize_newlines(block.replace_text));
    }

    auto touched = FileMap {};
    for (auto const& [path, _]: original)
        touched.emplace(path, working.at(path));
    auto diff = unified_diff(original, touched);
    return EditApplication {std::move(working), std::move(diff), std::nullopt};
}

// ---------------------------------------------------------------------------
// unified diff parsing / application

namespace
{

std::string strip_path(std::string_view raw)
{
    // Drop a trailing tab-separated timestamp.
    auto const tab = raw.find('\t');
    if (tab != std::string_view::npos)
        raw = raw.substr(0, tab);
    while (!raw.empty() && (raw.back() == ' ' || raw.back() == '\r'))
        raw.remove_suffix(1);
    if (raw == "/dev/null")
        return {};
    if (raw.starts_with("a/") || raw.starts_with("b/"))
        raw.remove_prefix(2);
    return std::string(raw);
}

bool parse_range(std::string_view text, int& start, int& count)
{
    auto const comma = text.find(',');
    auto const first = text.substr(0, comma);
    if (std::from_chars(first.data(), first.data() + first.size(), start).ec != std::errc {})
        return false;
    count = 1;
    if (comma != std::string_view::npos)
    {
        auto const second = text.substr(comma + 1);
        if (std::from_chars(second.data(), second.data() + second.size(), count).ec != std::errc {})
            return false;
    }
    return true;
}

bool parse_hunk_header(std::string_view line, PatchHunk& hunk)
{
    // @@ -a,b +c,d @@ optional section
    if (!line.starts_with("@@ -"))
        return false;
    auto rest = line.substr(4);
    auto const space = rest.find(' ');
    if (space == std::string_view::npos)
        return false;
    if (!parse_range(rest.substr(0, space), hunk.old_start, hunk.old_count))
        return false;
    rest = rest.substr(space + 1);
    if (!rest.starts_with("+"))
        return false;
    rest.remove_prefix(1);
    auto const end = rest.find(' ');
    return parse_range(rest.substr(0, end), hunk.new_start, hunk.new_count);
}

std::vector<std::string_view> split_plain(std::string_view text)
{
    auto lines = std::vector<std::string_view> {};
    std::size_t start = 0;
    while (start < text.size())
    {
        auto const nl = text.find('\n', start);
        if (nl == std::string_view::npos)
        {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

} // namespace

std::vector<FilePatch> parse_unified_diff(std::string_view patch_text)
{
    auto const normalized = normalize_newlines(patch_text);
    auto const lines = split_plain(normalized);
    auto patches = std::vector<FilePatch> {};
    std::size_t i = 0;
    while (i < lines.size())
    {
        auto const line = lines[i];
        if (!line.starts_with("--- "))
        {
            ++i;
            continue;
        }
        if (i + 1 >= lines.size() || !lines[i + 1].starts_with("+++ "))
            throw SchemaError(fmt::format("line {}: '---' header without a following '+++' header", i + 1));
        auto file = FilePatch {};
        file.old_path = strip_path(line.substr(4));
        file.new_path = strip_path(lines[i + 1].substr(4));
        if (file.old_path.empty() && file.new_path.empty())
            throw SchemaError("file header names /dev/null on both sides");
        i += 2;
        while (i < lines.size() && lines[i].starts_with("@@"))
        {
            auto hunk = PatchHunk {};
            if (!parse_hunk_header(lines[i], hunk))
                throw SchemaError(fmt::format("line {}: malformed hunk header", i + 1));
            ++i;
            int old_seen = 0;
            int new_seen = 0;
            while (i < lines.size() && (old_seen < hunk.old_count || new_seen < hunk.new_count))
            {
                auto body = lines[i];
                if (body.starts_with("\\"))
                {
                    hunk.lines.emplace_back(body);
                    ++i;
                    continue;
                }
                auto const tag = body.empty() ? ' ' : body.front();
                auto const content = body.empty() ? std::string_view {} : body.substr(1);
                if (tag == ' ')
                {
                    ++old_seen;
                    ++new_seen;
                }
                else if (tag == '-')
                {
                    ++old_seen;
                }
                else if (tag == '+')
                {
                    ++new_seen;
                }
                else
                {
                    throw SchemaError(fmt::format("line {}: unexpected hunk line", i + 1));
                }
                hunk.lines.push_back(std::string(1, tag) + std::string(content));
                ++i;
            }
            if (old_seen != hunk.old_count || new_seen != hunk.new_count)
                throw SchemaError("hunk body shorter than its header declares");
            if (i < lines.size() && lines[i].starts_with("\\"))
            {
                hunk.lines.emplace_back(lines[i]);
                ++i;
            }
            file.hunks.push_back(std::move(hunk));
        }
        patches.push_back(std::move(file));
    }
    if (patches.empty())
        throw SchemaError("patch contains no file sections");
    return patches;
}

EditApplication apply_patch(FileMap files,
                            std::string_view patch_text,
                            const std::function<std::optional<std::string>(const std::string&)>& load)
{
    auto fail = [&](EditError error) {
        return EditApplication {std::move(files), {}, std::move(error)};
    };

    auto parsed = std::vector<FilePatch> {};
    try
    {
        parsed = parse_unified_diff(patch_text);
    }
    catch (const SchemaError& e)
    {
        return fail({EditErrorKind::patch_malformed, {}, 0, 0, e.what()});
    }

    auto working = files;
    auto before = FileMap {};
    auto after = FileMap {};
    auto deleted = std::set<std::string> {};

    for (auto const& file: parsed)
    {
        auto const& target = file.new_path.empty() ? file.old_path : file.new_path;
        if (!is_safe_relative_path(target) || (!file.old_path.empty() && !is_safe_relative_path(file.old_path)))
            return fail({EditErrorKind::invalid_block, target, 0, 0, fmt::format("unsafe path '{}'", target)});

        auto content = std::string {};
        if (!file.old_path.empty())
        {
            auto it = working.find(file.old_path);
            if (it != working.end())
            {
                content = it->second;
            }
            else
            {
                auto loaded = load ? load(file.old_path) : std::nullopt;
                if (!loaded)
                    return fail({EditErrorKind::missing_file, file.old_path, 0, 0, {}});
                content = *loaded;
            }
            if (!before.contains(file.old_path))
                before.emplace(file.old_path, content);
        }

        auto lines = std::vector<std::string> {};
        for (auto line: split_plain(content))
            lines.emplace_back(line);
        bool trailing_newline = content.empty() || content.back() == '\n';

        int offset = 0;
        int hunk_number = 0;
        for (auto const& hunk: file.hunks)
        {
            ++hunk_number;
            auto old_lines = std::vector<std::string> {};
            auto new_lines = std::vector<std::string> {};
            bool new_missing_newline = false;
            bool old_missing_newline = false;
            char previous = ' ';
            for (auto const& line: hunk.lines)
            {
                if (line.starts_with("\\"))
                {
                    if (previous == '-')
                        old_missing_newline = true;
                    else if (previous == '+')
                        new_missing_newline = true;
                    else
                        old_missing_newline = new_missing_newline = true;
                    continue;
                }
                previous = line.front();
                if (line.front() != '+')
                    old_lines.push_back(line.substr(1));
                if (line.front() != '-')
                    new_lines.push_back(line.substr(1));
            }
            (void) old_missing_newline;

            auto matches_at = [&](long pos) {
                if (pos < 0 || pos + static_cast<long>(old_lines.size()) > static_cast<long>(lines.size()))
                    return false;
                return std::equal(old_lines.begin(), old_lines.end(), lines.begin() + pos);
            };
            long const expected = (hunk.old_count == 0 ? hunk.old_start : hunk.old_start - 1) + offset;
            long found = -1;
            if (matches_at(expected))
            {
                found = expected;
            }
            else
            {
                auto const limit = static_cast<long>(lines.size());
                for (long delta = 1; delta <= limit && found < 0; ++delta)
                {
                    if (matches_at(expected - delta))
                        found = expected - delta;
                    else if (matches_at(expected + delta))
                        found = expected + delta;
                }
            }
            if (found < 0)
            {
                return fail({EditErrorKind::patch_conflict,
                             target,
                             hunk_number,
                             0,
                             fmt::format("hunk {} does not apply to {}", hunk_number, target)});
            }
            auto const at_end = found + static_cast<long>(old_lines.size()) == static_cast<long>(lines.size());
            lines.erase(lines.begin() + found, lines.begin() + found + static_cast<long>(old_lines.size()));
            lines.insert(lines.begin() + found, new_lines.begin(), new_lines.end());
            offset += static_cast<int>(new_lines.size()) - static_cast<int>(old_lines.size());
            if (at_end)
                trailing_newline = !new_missing_newline;
        }

        if (file.new_path.empty())
        {
            working.erase(file.old_path);
            deleted.insert(file.old_path);
            after.erase(file.old_path);
            continue;
        }
        auto result = std::string {};
        for (std::size_t k = 0; k < lines.size(); ++k)
        {
            result += lines[k];
            if (k + 1 < lines.size() || trailing_newline)
                result += '\n';
        }
        if (!file.old_path.empty() && file.old_path != file.new_path)
        {
            working.erase(file.old_path);
            deleted.insert(file.old_path);
        }
        working[file.new_path] = result;
        after[file.new_path] = result;
        deleted.erase(file.new_path);
    }

    for (auto const& [path, content]: working)
    {
        if (before.contains(path) && !after.contains(path) && !deleted.contains(path))
            after.emplace(path, content);
    }
    auto diff = unified_diff(before, after);
    return EditApplication {std::move(working), std::move(diff), std::nullopt};
}

std::vector<std::string> touched_files(const Edit& edit)
{
    auto paths = std::set<std::string> {};
    if (edit.patch)
    {
        try
        {
            for (auto const& file: parse_unified_diff(*edit.patch))
            {
                if (!file.old_path.empty())
                    paths.insert(file.old_path);
                if (!file.new_path.empty())
                    paths.insert(file.new_path);
            }
        }
        catch (const SchemaError&)
        {
        }
    }
    for (auto const& block: edit.blocks)
        paths.insert(block.file_path);
    return {paths.begin(), paths.end()};
}

} // namespace scaleswe
