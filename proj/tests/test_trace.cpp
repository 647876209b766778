#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "epitrace/error.hpp"
#include "epitrace/trace.hpp"
#include "support/traces.hpp"

using namespace epitrace;
using namespace epitrace::trace;
using nlohmann::json;

namespace {

json minimal_doc() {
  return json{{"trace_id", "t1"},   {"model", "gpt"},   {"environment", "chem"}, {"scope", 1},
              {"scaffold", "react"}, {"task_id", "ph"}, {"trial", 0},           {"outcome_score", 1.0},
              {"messages",
               {{{"index", 0}, {"role", "user"}, {"content", "Find the pH."}},
                {{"index", 1}, {"role", "assistant"}, {"content", "Measuring."}}}}};
}

std::vector<Role> roles_of(const std::vector<Message>& msgs) {
  std::vector<Role> out;
  for (const auto& m : msgs) out.push_back(m.role);
  return out;
}

}  // namespace

TEST_CASE("minimal document parses with consecutive indices") {
  const auto t = parse_trace(minimal_doc().dump());
  REQUIRE(t.messages.size() == 2);
  CHECK(t.messages[0].index == 0);
  CHECK(t.messages[1].index == 1);
  CHECK(t.messages[0].is_task_description);
  CHECK_FALSE(t.messages[1].is_task_description);
}

TEST_CASE("tool calls survive parsing verbatim") {
  auto doc = minimal_doc();
  doc["messages"][1]["tool_calls"] = json::array({{{"name", "measure_pH"}, {"arguments", {{"label", "S1"}}}}});
  const auto t = parse_trace(doc.dump());
  REQUIRE(t.messages[1].tool_calls.size() == 1);
  CHECK(t.messages[1].tool_calls[0].name == "measure_pH");
  CHECK(t.messages[1].tool_calls[0].arguments.dump() == R"({"label":"S1"})");
}

TEST_CASE("missing role names the field") {
  auto doc = minimal_doc();
  doc["messages"][1].erase("role");
  try {
    parse_trace(doc.dump());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.field() == "messages[1].role");
    CHECK(e.exit_code() == ExitCode::kValidation);
  }
}

TEST_CASE("structural violations") {
  SUBCASE("gap in indices") {
    auto doc = minimal_doc();
    doc["messages"][1]["index"] = 2;
    CHECK_THROWS_AS(parse_trace(doc.dump()), StructuralError);
  }
  SUBCASE("tool calls on a user message") {
    auto doc = minimal_doc();
    doc["messages"][0]["tool_calls"] = json::array({{{"name", "x"}, {"arguments", json::object()}}});
    CHECK_THROWS_AS(parse_trace(doc.dump()), StructuralError);
  }
  SUBCASE("empty message list") {
    auto doc = minimal_doc();
    doc["messages"] = json::array();
    CHECK_THROWS_AS(parse_trace(doc.dump()), StructuralError);
  }
  SUBCASE("positive logprob") {
    auto doc = minimal_doc();
    doc["messages"][1]["token_logprobs"] = json::array({{{"token", "a"}, {"logprob", 0.5}}});
    CHECK_THROWS_AS(parse_trace(doc.dump()), ParseError);
  }
  SUBCASE("outcome out of range") {
    auto doc = minimal_doc();
    doc["outcome_score"] = 1.5;
    CHECK_THROWS_AS(parse_trace(doc.dump()), ParseError);
  }
  SUBCASE("not json") { CHECK_THROWS_AS(parse_trace("{oops"), ParseError); }
}

TEST_CASE("tool role is normalized to observation") {
  auto doc = minimal_doc();
  doc["messages"].push_back({{"index", 2}, {"role", "tool"}, {"content", "7.0"}});
  const auto t = parse_trace(doc.dump());
  CHECK(t.messages[2].role == Role::kObservation);
  CHECK(to_json(t)["messages"][2]["role"] == "observation");
}

TEST_CASE("iteration-limit sentinel is detected at ingest") {
  auto doc = minimal_doc();
  doc["messages"].push_back({{"index", 2}, {"role", "user"}, {"content", "  Maximum number of iterations reached.\n"}});
  const auto t = parse_trace(doc.dump());
  CHECK(t.messages[2].is_iteration_limit_error);
  CHECK_FALSE(t.messages[2].is_task_description);

  IngestOptions opts;
  opts.iteration_limit_sentinels.clear();
  CHECK_FALSE(parse_trace(doc.dump(), opts).messages[2].is_iteration_limit_error);
}

TEST_CASE("task description override") {
  auto doc = minimal_doc();
  doc["messages"].push_back({{"index", 2}, {"role", "user"}, {"content", "Subtask two."}});
  IngestOptions opts;
  opts.task_description_indices = std::set<int>{0, 2};
  const auto t = parse_trace(doc.dump(), opts);
  CHECK(t.messages[0].is_task_description);
  CHECK(t.messages[2].is_task_description);

  doc["messages"][2]["is_task_description"] = true;
  const auto flagged = parse_trace(doc.dump());
  CHECK_FALSE(flagged.messages[0].is_task_description);
  CHECK(flagged.messages[2].is_task_description);
}

TEST_CASE("annotatable messages per mode") {
  const auto t = testgen::make_trace("t", {{Role::kSystem, "sys"},
                                           {Role::kUser, "task"},
                                           {Role::kAssistant, "a"},
                                           {Role::kObservation, "o"}});
  CHECK(roles_of(annotatable_messages(t, AnnotationMode::kEpistemic)) ==
        std::vector<Role>{Role::kUser, Role::kAssistant, Role::kObservation});
  CHECK(roles_of(annotatable_messages(t, AnnotationMode::kMarker)) == std::vector<Role>{Role::kAssistant});

  const auto only_system = testgen::make_trace("s", {{Role::kSystem, "sys"}});
  CHECK(annotatable_messages(only_system, AnnotationMode::kEpistemic).empty());
}

TEST_CASE("assistant turns") {
  const auto t = testgen::make_trace(
      "t", {{Role::kUser, "u"}, {Role::kAssistant, "a1"}, {Role::kObservation, "o"}, {Role::kAssistant, "a2"}});
  const auto turns = assistant_turns(t);
  REQUIRE(turns.size() == 2);
  CHECK(turns[0].content == "a1");
  CHECK(turns[1].content == "a2");
  CHECK(assistant_turns(testgen::make_trace("u", {{Role::kUser, "u"}})).empty());

  std::vector<testgen::Msg> five;
  for (int i = 0; i < 5; ++i) five.push_back({Role::kAssistant, std::to_string(i)});
  const auto t5 = assistant_turns(testgen::make_trace("five", five));
  REQUIRE(t5.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(t5[i].content == std::to_string(i));
}

TEST_CASE("render and parse round-trip on random traces") {
  std::mt19937_64 rng(7);
  const std::array roles = {Role::kSystem, Role::kUser, Role::kAssistant, Role::kObservation};
  for (int round = 0; round < 200; ++round) {
    Trace t;
    t.trace_id = "r" + std::to_string(round);
    t.model = "model";
    t.environment = "env";
    t.scope = 1 + static_cast<int>(rng() % 3);
    t.scaffold = "s";
    t.task_id = "task";
    t.trial = static_cast<int>(rng() % 15);
    t.outcome_score = static_cast<double>(rng() % 5) / 4.0;
    const auto n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      Message m;
      m.index = static_cast<int>(i);
      m.role = roles[rng() % roles.size()];
      m.content = "line \"" + std::to_string(rng() % 1000) + "\"\n\tü";
      if (m.role == Role::kAssistant && rng() % 2) {
        m.tool_calls.push_back({"tool", {{"x", static_cast<int>(rng() % 9)}, {"y", "v"}, {"z", {1, 2}}}});
        m.token_logprobs = std::vector<TokenLogprob>{{"a", -0.25, false}, {"<eos>", 0.0, true}};
      }
      m.is_task_description = rng() % 4 == 0;
      m.is_iteration_limit_error = rng() % 6 == 0;
      t.messages.push_back(std::move(m));
    }
    const auto back = parse_trace(render_trace(t));
    CHECK(back == t);
  }
}

TEST_CASE("marker messages are a subset of epistemic messages") {
  std::mt19937_64 rng(11);
  for (int round = 0; round < 100; ++round) {
    std::vector<testgen::Msg> msgs;
    const auto n = 1 + rng() % 10;
    for (std::size_t i = 0; i < n; ++i) msgs.push_back({static_cast<Role>(rng() % 4), "c"});
    const auto t = testgen::make_trace("t", msgs);
    const auto epi = annotatable_messages(t, AnnotationMode::kEpistemic);
    for (const auto& m : annotatable_messages(t, AnnotationMode::kMarker)) {
      CHECK(std::find(epi.begin(), epi.end(), m) != epi.end());
    }
    const auto non_assistant = std::count_if(t.messages.begin(), t.messages.end(),
                                             [](const Message& m) { return m.role != Role::kAssistant; });
    CHECK(assistant_turns(t).size() + static_cast<std::size_t>(non_assistant) == t.messages.size());
  }
}

TEST_CASE("corpus indexing and loading") {
  TraceCorpus corpus;
  corpus.add(testgen::tool_trace("a", 1));
  corpus.add(testgen::tool_trace("b", 2));
  CHECK_THROWS_AS(corpus.add(testgen::tool_trace("a", 1)), StructuralError);
  CHECK(corpus.find("b")->messages.size() == 6);
  CHECK(corpus.find("zzz") == nullptr);
  CHECK(corpus.lookup(CorpusKey{"m", "chem", 1, "react", "task-1"}).size() == 2);

  const auto dir = std::filesystem::temp_directory_path() / "epitrace_corpus_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  for (const auto& t : corpus.traces()) std::ofstream(dir / (t.trace_id + ".json")) << render_trace(t);
  const auto loaded = load_corpus(dir);
  CHECK(loaded.size() == 2);
  CHECK(*loaded.find("a") == *corpus.find("a"));

  std::ofstream(dir / "stream.jsonl") << to_json(corpus.traces()[0]).dump() << "\n\n"
                                      << to_json(corpus.traces()[1]).dump() << "\n";
  CHECK(load_corpus(dir / "stream.jsonl").size() == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("group labels") {
  const auto t = testgen::tool_trace("a", 1);
  const std::vector<GroupField> fields{GroupField::kModel, GroupField::kEnvironment};
  CHECK(group_label(t, fields) == "m|chem");
  CHECK(group_label(t, {}) == "all");
  CHECK(parse_group_field("scaffold") == GroupField::kScaffold);
  CHECK_FALSE(parse_group_field("colour"));
}
