// SPDX-License-Identifier: Apache-2.0
#include <scaleswe/prompts.hpp>

#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace scaleswe
{

namespace
{

constexpr std::string_view kRelevanceSystem = R"(You review one file of a code repository at a time and decide whether a developer fixing the issue below would need to read or edit it.)";

constexpr std::string_view kRelevanceUser = R"(<issue>
{{issue}}
</issue>

<file path="{{file_path}}"{{part_note}}>
{{file_contents}}
</file>

Is this file relevant to resolving the issue? Answer with RELEVANT or IRRELEVANT on the first line. If the file is relevant, follow with a concise summary of how it relates to the issue.)";

constexpr std::string_view kRankingSystem = R"(You order repository files by how important they are for resolving an issue.)";

constexpr std::string_view kRankingUser = R"(<issue>
{{issue}}
</issue>

The following files were flagged as relevant. Each entry lists the path, its size in tokens, and a summary of its relevance.

{{file_list}}

Rank the files from most to least important. Include approximately {{target_tokens}} tokens of context in total; you may leave out files that are not needed. Reply with one path per line inside a fenced block tagged `ranking`:

```ranking
path/one.py
path/two.py
```)";

constexpr std::string_view kRankingCorrection = R"(Your reply could not be parsed as a ranking: {{error}}
Reply again with one known path per line inside a single ```ranking fenced block.)";

constexpr std::string_view kActionFormat = R"(Every reply must contain exactly one fenced block whose tag names your action.

To write or rewrite the test script:
```test
<complete Python script>
```

To write or rewrite the codebase edit, give one or more FILE sections; each SEARCH text must match exactly one location of the current file:
```edit
@@@ FILE path/relative/to/repository.py
@@@ SEARCH
<exact lines to replace>
@@@ REPLACE
<new lines>
@@@ END
```

To approve your current work and finish:
```approve
```

To select candidate N (0-based) and finish:
```select:N
```)";

constexpr std::string_view kTestingSystem = R"(You write standalone Python test scripts that reproduce reported issues.

{{action_format}}

Allowed actions in this session: test, approve.)";

constexpr std::string_view kTestingInitial = R"(<issue>
{{issue}}
</issue>

Write a test script that reproduces the issue. The script should exit with code 0 if the issue is fixed and exit with code 2 if the issue is not fixed. It runs from the repository root.)";

constexpr std::string_view kTestingIteration = R"(Here is the output of your test script on the unedited repository:

{{execution_output}}
If the script correctly detects the issue (exit code 2 before any fix), approve it. Otherwise rewrite the test.)";

constexpr std::string_view kEditingSystem = R"(You fix issues in code repositories by editing files, and you check your work with a test script.

{{action_format}}

Allowed actions in this session: edit, test, approve.)";

constexpr std::string_view kEditingInitial = R"(<issue>
{{issue}}
</issue>

<codebase_context>
{{context}}
</codebase_context>

<test_script>
{{test_script}}
</test_script>

Output of the test script on the unedited repository:

{{pre_edit_output}}
Write a codebase edit that resolves the issue.)";

constexpr std::string_view kEditingIteration = R"({{feedback}}
A good test fails (exit 2) before the edit and passes (exit 0) after it. Rewrite the edit, rewrite the test, or approve the current (edit, test) pair.)";

constexpr std::string_view kSelectionSystem = R"(You choose the correct fix for an issue among several candidate edits. You may write test scripts to tell the candidates apart.

{{action_format}}

Allowed actions in this session: test, select:N.)";

constexpr std::string_view kSelectionInitial = R"(<issue>
{{issue}}
</issue>

<files>
{{file_contents}}
</files>

<candidates>
{{candidates}}
</candidates>

<example_test>
{{example_test}}
</example_test>

Write a test script for distinguishing between the candidates and assessing their correctness, or select the correct candidate.)";

constexpr std::string_view kSelectionIteration = R"({{feedback}}
Write a new test script, or select a candidate.)";

constexpr std::string_view kModelSelect = R"(<issue>
{{issue}}
</issue>

<codebase_context>
{{context}}
</codebase_context>

<candidates>
{{candidates}}
</candidates>

Which candidate edit resolves the issue? Reply with a single fenced block:
```select:N
```
where N is the 0-based candidate number (0 to {{last_index}}).)";

constexpr std::string_view kCorrection = R"(Your previous reply could not be used: {{error}}
Reply again following the required format exactly.)";

} // namespace

PromptLibrary::PromptLibrary()
{
    _templates.emplace("relevance_system", kRelevanceSystem);
    _templates.emplace("relevance_user", kRelevanceUser);
    _templates.emplace("ranking_system", kRankingSystem);
    _templates.emplace("ranking_user", kRankingUser);
    _templates.emplace("ranking_correction", kRankingCorrection);
    _templates.emplace("action_format", kActionFormat);
    _templates.emplace("testing_system", kTestingSystem);
    _templates.emplace("testing_initial", kTestingInitial);
    _templates.emplace("testing_iteration", kTestingIteration);
    _templates.emplace("editing_system", kEditingSystem);
    _templates.emplace("editing_initial", kEditingInitial);
    _templates.emplace("editing_iteration", kEditingIteration);
    _templates.emplace("selection_system", kSelectionSystem);
    _templates.emplace("selection_initial", kSelectionInitial);
    _templates.emplace("selection_iteration", kSelectionIteration);
    _templates.emplace("model_select", kModelSelect);
    _templates.emplace("correction", kCorrection);
}

void PromptLibrary::load_overrides(const fs::path& dir)
{
    for (auto& [name, text]: _templates)
    {
        auto const path = dir / (name + ".txt");
        std::error_code ec;
        if (!fs::is_regular_file(path, ec))
            continue;
        auto in = std::ifstream(path, std::ios::binary);
        auto buffer = std::ostringstream {};
        buffer << in.rdbuf();
        text = normalize_newlines(buffer.str());
    }
}

void PromptLibrary::export_to(const fs::path& dir) const
{
    fs::create_directories(dir);
    for (auto const& [name, text]: _templates)
    {
        auto out = std::ofstream(dir / (name + ".txt"), std::ios::binary | std::ios::trunc);
        out << text;
    }
}

const std::string& PromptLibrary::raw(std::string_view name) const
{
    auto const it = _templates.find(name);
    if (it == _templates.end())
        throw ContractError(fmt::format("unknown prompt template '{}'", name));
    return it->second;
}

std::vector<std::string> PromptLibrary::names() const
{
    auto out = std::vector<std::string> {};
    for (auto const& [name, _]: _templates)
        out.push_back(name);
    return out;
}

std::string PromptLibrary::render(std::string_view name, const PromptValues& values) const
{
    auto filled = values;
    if (!filled.contains("action_format"))
        filled.emplace("action_format", raw("action_format"));
    return fill_template(raw(name), filled);
}

std::string fill_template(std::string_view text, const PromptValues& values)
{
    auto out = std::string {};
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size())
    {
        auto const open = text.find("{{", pos);
        if (open == std::string_view::npos)
        {
            out.append(text.substr(pos));
            break;
        }
        auto const close = text.find("}}", open + 2);
        if (close == std::string_view::npos)
        {
            out.append(text.substr(pos));
            break;
        }
        out.append(text.substr(pos, open - pos));
        auto const key = std::string(text.substr(open + 2, close - open - 2));
        auto const it = values.find(key);
        if (it == values.end())
            throw ContractError(fmt::format("prompt placeholder '{}' has no value", key));
        out.append(it->second);
        pos = close + 2;
    }
    return out;
}

} // namespace scaleswe
