// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <scaleswe/core.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scaleswe
{

/// In-memory view of a set of files, keyed by snapshot-relative path.
using FileMap = std::map<std::string, std::string>;

/// Git-style unified diff of one file (3 lines of context). Empty when equal.
[[nodiscard]] std::string unified_diff(std::string_view path, std::string_view before, std::string_view after);

/// Diff over every path present in either map, in path order.
[[nodiscard]] std::string unified_diff(const FileMap& before, const FileMap& after);

enum class EditErrorKind
{
    no_match,
    ambiguous_match,
    missing_file,
    invalid_block,
    patch_malformed,
    patch_conflict,
};

struct EditError
{
    EditErrorKind kind = EditErrorKind::no_match;
    std::string file_path;
    /// 1-based block (or hunk) number.
    int block = 0;
    int match_count = 0;
    std::string message;

    [[nodiscard]] std::string describe() const;

    bool operator==(const EditError&) const = default;
};

std::string_view to_string(EditErrorKind kind);

/// Outcome of applying an edit to an in-memory file set.
struct EditApplication
{
    FileMap files;
    std::string diff;
    std::optional<EditError> error;

    [[nodiscard]] bool ok() const { return !error.has_value(); }
};

/// Counts non-overlapping occurrences of `needle`.
[[nodiscard]] int count_occurrences(std::string_view haystack, std::string_view needle);

/// Applies search/replace blocks in order; each search text must occur exactly
/// once in the current contents of its file. On error `files` is the input.
/// `load` is asked for files not yet present in `files`.
[[nodiscard]] EditApplication apply_blocks(FileMap files,
                                           const std::vector<SearchReplaceBlock>& blocks,
                                           const std::function<std::optional<std::string>(const std::string&)>& load);

struct PatchHunk
{
    int old_start = 0;
    int old_count = 0;
    int new_start = 0;
    int new_count = 0;
    std::vector<std::string> lines; // prefixed with ' ', '-', '+'
};

struct FilePatch
{
    std::string old_path; // empty for a created file
    std::string new_path; // empty for a deleted file
    std::vector<PatchHunk> hunks;
};

/// Parses a unified diff (git or plain). Throws SchemaError on malformed input.
[[nodiscard]] std::vector<FilePatch> parse_unified_diff(std::string_view patch);

/// Applies a parsed unified diff. Hunks must match exactly; a hunk may float
/// from its stated line when the stated position does not match.
[[nodiscard]] EditApplication apply_patch(FileMap files,
                                          std::string_view patch,
                                          const std::function<std::optional<std::string>(const std::string&)>& load);

/// Paths an edit touches (block paths, or patch paths).
[[nodiscard]] std::vector<std::string> touched_files(const Edit& edit);

} // namespace scaleswe
