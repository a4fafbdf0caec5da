// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <scaleswe/diff.hpp>
#include <scaleswe/process.hpp>
#include <scaleswe/sandbox.hpp>

#include <doctest.h>

#include <chrono>
#include <random>
#include <thread>

using namespace scaleswe;
using testing::TempDir;

namespace
{

auto const no_load = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };

Edit blocks_edit(std::vector<SearchReplaceBlock> blocks)
{
    auto edit = Edit {};
    edit.blocks = std::move(blocks);
    return edit;
}

/// Independent rewrite: replace the single occurrence or report failure.
std::optional<std::string> rewrite_once(const std::string& text, const std::string& search, const std::string& replace)
{
    auto const first = text.find(search);
    if (first == std::string::npos || text.find(search, first + 1) != std::string::npos)
        return std::nullopt;
    return text.substr(0, first) + replace + text.substr(first + search.size());
}

} // namespace

TEST_CASE("single exact match rewrites the file")
{
    auto const r = apply_blocks({{"f.py", "a=1\nb=2"}}, {{"f.py", "a=1", "a=2"}}, no_load);
    REQUIRE(r.ok());
    CHECK(r.files.at("f.py") == "a=2\nb=2");
    CHECK(r.diff.find("-a=1") != std::string::npos);
    CHECK(r.diff.find("+a=2") != std::string::npos);
}

TEST_CASE("a search occurring twice is ambiguous")
{
    auto const r = apply_blocks({{"f.py", "xx"}}, {{"f.py", "x", "y"}}, no_load);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error->kind == EditErrorKind::ambiguous_match);
    CHECK(r.error->match_count == 2);
    CHECK(r.files.at("f.py") == "xx");
}

TEST_CASE("missing search, missing file, and invalid blocks")
{
    auto r = apply_blocks({{"f.py", "abc"}}, {{"f.py", "zzz", "y"}}, no_load);
    CHECK(r.error->kind == EditErrorKind::no_match);
    CHECK(r.error->block == 1);
    r = apply_blocks({}, {{"nope.py", "a", "b"}}, no_load);
    CHECK(r.error->kind == EditErrorKind::missing_file);
    r = apply_blocks({{"f.py", "abc"}}, {{"../f.py", "a", "b"}}, no_load);
    CHECK(r.error->kind == EditErrorKind::invalid_block);
}

TEST_CASE("second block sees the first block's result")
{
    auto const original = std::string("def f():\n    return 1\n");
    auto const blocks = std::vector<SearchReplaceBlock> {
        {"m.py", "return 1", "return helper()"},
        {"m.py", "return helper()", "return helper() + 1"},
    };
    auto const r = apply_blocks({{"m.py", original}}, blocks, no_load);
    REQUIRE(r.ok());
    auto expected = rewrite_once(original, blocks[0].search_text, blocks[0].replace_text);
    REQUIRE(expected);
    expected = rewrite_once(*expected, blocks[1].search_text, blocks[1].replace_text);
    REQUIRE(expected);
    CHECK(r.files.at("m.py") == *expected);
}

TEST_CASE("block application agrees with an independent rewrite on random inputs")
{
    auto rng = std::mt19937(5);
    auto letter = std::uniform_int_distribution<int>('a', 'c');
    auto length = std::uniform_int_distribution<int>(1, 3);
    auto random_text = [&](int n) {
        auto s = std::string {};
        for (int i = 0; i < n; ++i)
            s += static_cast<char>(letter(rng));
        return s;
    };
    for (int trial = 0; trial < 2000; ++trial)
    {
        auto const text = random_text(12);
        auto const search = random_text(length(rng));
        auto const replace = random_text(length(rng));
        auto const r = apply_blocks({{"f", text}}, {{"f", search, replace}}, no_load);
        auto const expected = rewrite_once(text, search, replace);
        CHECK(r.ok() == expected.has_value());
        if (expected)
            CHECK(r.files.at("f") == *expected);
        else
            CHECK(r.files.at("f") == text);
    }
}

TEST_CASE("unified diffs re-apply to reproduce the edited file")
{
    auto rng = std::mt19937(9);
    auto pick = std::uniform_int_distribution<int>(0, 9);
    for (int trial = 0; trial < 300; ++trial)
    {
        auto before = std::string {};
        auto after = std::string {};
        for (int line = 0; line < 30; ++line)
        {
            auto const text = fmt::format("line {}\n", pick(rng));
            before += text;
            auto const mutation = pick(rng);
            if (mutation == 0)
                continue;
            if (mutation == 1)
                after += "inserted\n";
            after += text;
        }
        auto const diff = unified_diff("f.txt", before, after);
        if (before == after)
        {
            CHECK(diff.empty());
            continue;
        }
        auto const r = apply_patch({{"f.txt", before}}, diff, no_load);
        REQUIRE(r.ok());
        CHECK(r.files.at("f.txt") == after);
    }
}

TEST_CASE("patches create and delete files and reject conflicts")
{
    auto const created = unified_diff(FileMap {}, FileMap {{"new.py", "x = 1\n"}});
    auto r = apply_patch({}, created, no_load);
    REQUIRE(r.ok());
    CHECK(r.files.at("new.py") == "x = 1\n");

    auto const deleted = unified_diff(FileMap {{"old.py", "y\n"}}, FileMap {});
    r = apply_patch({{"old.py", "y\n"}}, deleted, no_load);
    REQUIRE(r.ok());
    CHECK_FALSE(r.files.contains("old.py"));

    auto const diff = unified_diff("f.py", "a\nb\nc\n", "a\nB\nc\n");
    r = apply_patch({{"f.py", "totally\ndifferent\n"}}, diff, no_load);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error->kind == EditErrorKind::patch_conflict);
    CHECK_THROWS_AS((void)parse_unified_diff("@@ nonsense"), SchemaError);
}

TEST_CASE("materialize copies the snapshot and isolates workspaces")
{
    auto dir = TempDir {};
    auto const instance = testing::make_instance(dir.path(), {{"pkg/a.py", "a = 1\n"}, {"b.txt", "b\n"}});
    auto const sandbox = testing::make_sandbox(dir / "ws");
    auto one = sandbox.materialize(instance);
    auto two = sandbox.materialize(instance);
    CHECK(one.root() != two.root());
    CHECK(tree_digest(one.root()) == tree_digest(instance.codebase_ref));
    CHECK(tree_digest(two.root()) == tree_digest(instance.codebase_ref));
    testing::write_file(one.root() / "pkg/a.py", "changed\n");
    CHECK(tree_digest(two.root()) == tree_digest(instance.codebase_ref));

    auto const root = one.root();
    {
        auto moved = std::move(one);
    }
    CHECK_FALSE(fs::exists(root));

    auto missing = instance;
    missing.codebase_ref = dir / "nowhere";
    CHECK_THROWS_AS((void)sandbox.materialize(missing), SandboxError);
}

TEST_CASE("apply_edit is all-or-nothing on disk")
{
    auto dir = TempDir {};
    auto const instance = testing::make_instance(dir.path(), {{"a.py", "x = 1\n"}, {"b.py", "y = 2\n"}});
    auto const sandbox = testing::make_sandbox(dir / "ws");
    auto ws = sandbox.materialize(instance);
    auto const before = tree_digest(ws.root());
    auto bad = blocks_edit({{"a.py", "x = 1", "x = 10"}, {"b.py", "absent", "z"}});
    auto const failed = sandbox.apply_edit(ws, bad);
    REQUIRE_FALSE(failed.ok());
    CHECK(failed.error->kind == EditErrorKind::no_match);
    CHECK(failed.error->block == 2);
    CHECK(tree_digest(ws.root()) == before);

    auto good = blocks_edit({{"a.py", "x = 1", "x = 10"}, {"b.py", "y = 2", "y = 20"}});
    auto const ok = sandbox.apply_edit(ws, good);
    REQUIRE(ok.ok());
    CHECK(testing::read_file(ws.root() / "a.py") == "x = 10\n");
    CHECK(testing::read_file(ws.root() / "b.py") == "y = 20\n");
    CHECK(good.unified_diff == ok.unified_diff);
    CHECK_THROWS_AS((void)sandbox.apply_edit(ws, good), ContractError);
}

TEST_CASE("render_edit matches the on-disk application")
{
    auto dir = TempDir {};
    auto const instance = testing::make_instance(dir.path(), {{"a.py", "x = 1\n"}});
    auto const sandbox = testing::make_sandbox(dir / "ws");
    auto edit = blocks_edit({{"a.py", "x = 1", "x = 2"}});
    auto const rendered = sandbox.render_edit(instance.codebase_ref, edit);
    auto ws = sandbox.materialize(instance);
    auto const applied = sandbox.apply_edit(ws, edit);
    CHECK(rendered.unified_diff == applied.unified_diff);
}

TEST_CASE("script exit codes surface as typed outcomes")
{
    auto dir = TempDir {};
    auto const instance = testing::make_instance(dir.path(), {{"a.py", "x = 1\n"}});
    auto const sandbox = testing::make_sandbox(dir / "ws");
    auto const ws = sandbox.materialize(instance);
    for (auto const& [code, outcome]: {std::pair {0, TestOutcome::pass},
                                      std::pair {2, TestOutcome::fail},
                                      std::pair {1, TestOutcome::error},
                                      std::pair {3, TestOutcome::error}})
    {
        auto const r = sandbox.run_script(ws, testing::exit_script(code));
        CHECK(r.exit_code == code);
        CHECK_FALSE(r.timed_out);
        CHECK(classify(r) == outcome);
    }

    auto const imports = sandbox.run_script(ws, {"import a\nprint('x is', a.x)\n"});
    CHECK(imports.exit_code == 0);
    CHECK(imports.stdout_text == "x is 1\n");

    auto const where = sandbox.run_script(ws, {"import os\nprint(os.getcwd())\nprint(__file__)\n"});
    CHECK(where.stdout_text.find(ws.root().string()) == std::string::npos);

    auto const crash = sandbox.run_script(ws, {"raise SystemExit(None if False else 'boom')\n"});
    CHECK(classify(crash) == TestOutcome::error);
    CHECK(crash.stderr_text.find("boom") != std::string::npos);
}

TEST_CASE("timeouts kill the whole process group")
{
    auto dir = TempDir {};
    auto const instance = testing::make_instance(dir.path(), {{"a.py", ""}});
    auto const sandbox = testing::make_sandbox(dir / "ws", 1.0);
    auto const ws = sandbox.materialize(instance);
    auto const marker = dir / "orphan-survived";
    auto const script = fmt::format("import subprocess, sys, time\n"
                                    "subprocess.Popen([sys.executable, '-c', "
                                    "'import time; time.sleep(3); open(r\"{}\", \"w\").write(\"x\")'])\n"
                                    "time.sleep(60)\n",
                                    marker.string());
    auto const start = std::chrono::steady_clock::now();
    auto const r = sandbox.run_script(ws, TestScript {script});
    auto const elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(r.timed_out);
    CHECK_FALSE(r.exit_code.has_value());
    CHECK(classify(r) == TestOutcome::timeout);
    CHECK(elapsed < 1.0 + 2.0);
    std::this_thread::sleep_for(std::chrono::milliseconds(3500));
    CHECK_FALSE(fs::exists(marker));
}

TEST_CASE("output is capped")
{
    auto dir = TempDir {};
    auto const instance = testing::make_instance(dir.path(), {{"a.py", ""}});
    auto config = SandboxConfig {};
    config.workspace_root = dir / "ws";
    config.output_cap = 100;
    auto const sandbox = Sandbox(config);
    auto const ws = sandbox.materialize(instance);
    auto const r = sandbox.run_script(ws, {"print('y' * 10000)\n"});
    CHECK(r.stdout_text.size() < 200);
    CHECK(r.stdout_text.find("truncated") != std::string::npos);
}

TEST_CASE("missing interpreter is an environment error")
{
    auto dir = TempDir {};
    auto const instance = testing::make_instance(dir.path(), {{"a.py", ""}});
    auto config = SandboxConfig {};
    config.workspace_root = dir / "ws";
    config.interpreter_cmd = {"definitely-not-an-interpreter-xyz", "{script}"};
    auto const sandbox = Sandbox(config);
    auto const ws = sandbox.materialize(instance);
    try
    {
        (void)sandbox.run_script(ws, testing::exit_script(0));
        FAIL("expected an environment error");
    }
    catch (const SandboxError& e)
    {
        CHECK(e.kind() == SandboxErrorKind::environment);
    }
}

TEST_CASE("concurrent scripts on distinct workspaces do not interfere")
{
    auto dir = TempDir {};
    auto const instance = testing::make_instance(dir.path(), {{"a.py", ""}});
    auto const sandbox = testing::make_sandbox(dir / "ws");
    constexpr int kWorkers = 8;
    auto results = std::vector<std::string>(kWorkers);
    {
        auto threads = std::vector<std::jthread> {};
        for (int t = 0; t < kWorkers; ++t)
        {
            threads.emplace_back([&, t] {
                auto const ws = sandbox.materialize(instance);
                auto const script = fmt::format("import os\nopen('marker', 'w').write('{}')\n"
                                                "import time\ntime.sleep(0.05)\n"
                                                "print(open('marker').read(), sorted(os.listdir('.')))\n",
                                                t);
                results[static_cast<std::size_t>(t)] = sandbox.run_script(ws, TestScript {script}).stdout_text;
            });
        }
    }
    for (int t = 0; t < kWorkers; ++t)
        CHECK(results[static_cast<std::size_t>(t)] ==
              fmt::format("{} ['_generated_test.py', 'a.py', 'marker']\n", t));
}

TEST_CASE("oracle evaluation")
{
    auto dir = TempDir {};
    auto instance = testing::make_instance(dir.path(), {{"m.py", "def f():\n    return 1\n"}});
    testing::write_file(dir / "oracle.py",
                        "import os, sys\nsys.path.insert(0, os.getcwd())\nimport m\nsys.exit(0 if m.f() == 2 else 1)\n");
    instance.oracle_eval = OracleEval {"python3 {instance_dir}/oracle.py", 30};
    auto const sandbox = testing::make_sandbox(dir / "ws");

    CHECK(sandbox.evaluate_candidate(instance, blocks_edit({{"m.py", "return 1", "return 2"}})).correct);
    CHECK_FALSE(sandbox.evaluate_candidate(instance, Edit {}).correct);
    auto const broken = sandbox.evaluate_candidate(instance, blocks_edit({{"m.py", "return 7", "return 2"}}));
    CHECK_FALSE(broken.correct);
    REQUIRE(broken.reason);
    CHECK(broken.reason->find("no_match") != std::string::npos);

    instance.oracle_eval->command = "definitely-not-a-command-xyz";
    CHECK_THROWS_AS((void)sandbox.evaluate_candidate(instance, Edit {}), SandboxError);
}

TEST_CASE("process runner reports signals and working directory")
{
    auto dir = TempDir {};
    auto spec = ProcessSpec {};
    spec.argv = {"/bin/sh", "-c", "pwd; kill -9 $$"};
    spec.working_directory = dir.path();
    spec.timeout_s = 10;
    auto const r = run_process(spec);
    CHECK(r.exit_code == 128 + 9);
    CHECK(r.stdout_text == fs::canonical(dir.path()).string() + "\n");
    spec.argv = {"no-such-binary-xyz"};
    CHECK_THROWS_AS((void)run_process(spec), SpawnError);
}
