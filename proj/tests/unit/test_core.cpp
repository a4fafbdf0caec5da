// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <scaleswe/core.hpp>

#include <doctest.h>

using namespace scaleswe;

TEST_CASE("is_resolved looks up the selected candidate")
{
    CHECK(is_resolved({"i", {true, false}}, 0));
    CHECK_FALSE(is_resolved({"i", {false, false}}, 1));
    CHECK(is_resolved({"i", {false, true, true}}, 2));
    CHECK_THROWS_AS((void)is_resolved({"i", {true}}, 1), ContractError);
}

TEST_CASE("exit codes classify into the four outcomes")
{
    auto result = ExecutionResult {};
    result.exit_code = 0;
    CHECK(classify(result) == TestOutcome::pass);
    result.exit_code = 2;
    CHECK(classify(result) == TestOutcome::fail);
    result.exit_code = 1;
    CHECK(classify(result) == TestOutcome::error);
    result.exit_code = 139;
    CHECK(classify(result) == TestOutcome::error);
    result.exit_code.reset();
    result.timed_out = true;
    CHECK(classify(result) == TestOutcome::timeout);
}

TEST_CASE("path safety rejects absolute and parent components")
{
    CHECK(is_safe_relative_path("pkg/mod.py"));
    CHECK_FALSE(is_safe_relative_path("/etc/passwd"));
    CHECK_FALSE(is_safe_relative_path("pkg/../../x"));
    CHECK_FALSE(is_safe_relative_path(""));
}

TEST_CASE("document envelope round-trips and checks its kind")
{
    auto const doc = make_document("thing", json {{"b", 1}, {"a", 2}});
    CHECK(doc.at("schema_version") == kSchemaVersion);
    CHECK(document_payload(doc, "thing").at("a") == 2);
    CHECK_THROWS_AS((void)document_payload(doc, "other"), SchemaError);

    auto bad = doc;
    bad["schema_version"] = 99;
    CHECK_THROWS_AS((void)document_payload(bad, "thing"), SchemaError);

    auto const text = dump_document(doc);
    CHECK(text.back() == '\n');
    CHECK(text.find("\"a\"") < text.find("\"b\""));
}

TEST_CASE("newline normalization and output truncation")
{
    CHECK(normalize_newlines("a\r\nb\rc\n") == "a\nb\nc\n");
    auto const long_text = std::string(1000, 'x');
    auto const cut = truncate_output(long_text, 100);
    CHECK(cut.size() < long_text.size());
    CHECK(cut.find("truncated") != std::string::npos);
    CHECK(truncate_output("short", 100) == "short");
}

TEST_CASE("shorter diffs win ties, then candidate ids")
{
    auto a = CandidateSample {};
    a.candidate_id = "b";
    a.edit.unified_diff = "12345";
    auto b = CandidateSample {};
    b.candidate_id = "a";
    b.edit.unified_diff = "1234567";
    CHECK(shorter_diff_first(a, b));
    b.edit.unified_diff = "12345";
    CHECK(shorter_diff_first(b, a));
    CHECK_FALSE(shorter_diff_first(a, b));
}

TEST_CASE("trajectory json round-trip")
{
    auto t = Trajectory {};
    t.trajectory_id = "x/testing/00";
    t.machine_kind = MachineKind::editing;
    t.turns.push_back({Role::system, "sys", {}, std::nullopt});
    auto action = Action {};
    action.kind = ActionKind::write_edit;
    action.edit = Edit {{{"a.py", "x", "y"}}, std::nullopt, ""};
    t.turns.push_back({Role::assistant, "reply", {1, 2, 3, 4}, action});
    t.iteration_snapshots.push_back({TestScript {"print(1)"}, action.edit, std::nullopt});
    t.terminal_status = TerminalStatus::approved;
    t.completions_used = 1;
    t.notes.push_back("n");
    auto const back = json(t).get<Trajectory>();
    CHECK(back == t);
    CHECK(back.assistant_turns() == 1);
    REQUIRE(back.final_snapshot() != nullptr);
    CHECK(back.final_snapshot()->test->script_text == "print(1)");
}

TEST_CASE("instance validation")
{
    auto dir = testing::TempDir {};
    auto instance = testing::make_instance(dir.path(), {{"a.py", "x = 1\n"}});
    CHECK_NOTHROW(instance.validate());
    instance.gold_edit_files = std::vector<std::string> {"a.py"};
    CHECK_NOTHROW(instance.validate());
    instance.gold_edit_files = std::vector<std::string> {"missing.py"};
    CHECK_THROWS_AS(instance.validate(), ContractError);
    instance.gold_edit_files.reset();
    instance.instance_id.clear();
    CHECK_THROWS_AS(instance.validate(), ContractError);
}

TEST_CASE("source filter")
{
    auto filter = SourceFileFilter {};
    CHECK(filter.accepts("pkg/mod.py"));
    CHECK_FALSE(filter.accepts("pkg/mod.txt"));
    CHECK_FALSE(filter.accepts("tests/test_mod.py"));
    CHECK_FALSE(filter.accepts("pkg/testing/helpers.py"));
}
