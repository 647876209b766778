#include <doctest.h>

#include <httplib.h>

#include <thread>

#include "epitrace/error.hpp"
#include "epitrace/intervention.hpp"
#include "support/traces.hpp"

using namespace epitrace;
using namespace epitrace::intervention;
using epitrace::trace::Role;
using epitrace::trace::Trace;

namespace {

std::vector<int> iota_vec(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 1);
  return v;
}

// A trace with `turns` assistant messages and no tool calls.
Trace bare_turns(std::string id, int turns) {
  std::vector<testgen::Msg> msgs{{Role::kUser, "task"}};
  for (int i = 0; i < turns; ++i) msgs.push_back({Role::kAssistant, "a" + std::to_string(i + 1)});
  return testgen::make_trace(std::move(id), msgs);
}

std::vector<std::string> ids(const std::vector<const Trace*>& v) {
  std::vector<std::string> out;
  for (const auto* t : v) out.push_back(t->trace_id);
  return out;
}

}  // namespace

TEST_CASE("slice examples") {
  const auto a = iota_vec(5);
  CHECK(slice(std::span<const int>(a), 2) == std::vector<int>{1, 2});
  CHECK(slice(std::span<const int>(a), -1) == std::vector<int>{1, 2, 3, 4});
  const auto three = iota_vec(3);
  CHECK_THROWS_AS(slice(std::span<const int>(three), -3), DomainError);
  CHECK_THROWS_AS(slice(std::span<const int>(three), 4), DomainError);
  CHECK_THROWS_AS(slice(std::span<const int>(three), 0), DomainError);
}

TEST_CASE("slice length law") {
  for (int n = 0; n <= 10; ++n) {
    const auto a = iota_vec(n);
    for (int k = -12; k <= 12; ++k) {
      const bool valid = (k > 0 && n >= k) || (k < 0 && n > -k);
      if (!valid) {
        CHECK_THROWS_AS(slice(std::span<const int>(a), k), DomainError);
        continue;
      }
      const auto s = slice(std::span<const int>(a), k);
      CHECK(static_cast<int>(s.size()) == (k > 0 ? k : n + k));
      CHECK(std::equal(s.begin(), s.end(), a.begin()));
    }
  }
}

TEST_CASE("eligibility examples") {
  const auto t3 = bare_turns("three", 3);
  const auto t1 = bare_turns("one", 1);
  const std::vector<const Trace*> pool{&t3, &t1};
  CHECK(ids(eligible_pool(pool, 2)) == std::vector<std::string>{"three"});
  CHECK(ids(eligible_pool(pool, -2)) == std::vector<std::string>{"three"});
  const auto t5a = bare_turns("a", 5);
  const auto t5b = bare_turns("b", 5);
  const std::vector<const Trace*> fives{&t5a, &t5b};
  CHECK(eligible_pool(fives, 1).size() == 2);
  CHECK(eligible_pool(pool, 0).empty());
}

TEST_CASE("eligibility is idempotent") {
  std::vector<Trace> traces;
  for (int n = 0; n <= 10; ++n) traces.push_back(bare_turns("t" + std::to_string(n), n));
  std::vector<const Trace*> pool;
  for (const auto& t : traces) pool.push_back(&t);
  for (int k = -11; k <= 11; ++k) {
    const auto once = eligible_pool(pool, k);
    CHECK(eligible_pool(once, k) == once);
  }
}

TEST_CASE("sampling") {
  const auto a = bare_turns("a", 1);
  const auto b = bare_turns("b", 1);
  const std::vector<const Trace*> single{&a};
  CHECK(sample_trace(single, 99).trace_id == "a");
  const std::vector<const Trace*> pair{&a, &b};
  CHECK(sample_trace(pair, 7).trace_id == sample_trace(pair, 7).trace_id);
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 100; ++s) seen.insert(sample_trace(pair, s).trace_id);
  CHECK(seen.size() == 2);
  try {
    sample_trace({}, 1, "(chem, m, t, k=2)");
    FAIL("expected a sampling error");
  } catch (const SamplingError& e) {
    CHECK(std::string(e.what()).find("(chem, m, t, k=2)") != std::string::npos);
  }
}

TEST_CASE("registry pools tasks inside the success band") {
  trace::TraceCorpus corpus;
  // task-mid: 2 of 5 succeed; task-easy: 5 of 5; task-hard: 0 of 5.
  for (int i = 0; i < 5; ++i) {
    corpus.add(testgen::tool_trace("mid" + std::to_string(i), 3, "task-mid", i < 2 ? 1.0 : 0.0));
    corpus.add(testgen::tool_trace("easy" + std::to_string(i), 3, "task-easy", 1.0));
    corpus.add(testgen::tool_trace("hard" + std::to_string(i), 3, "task-hard", 0.0));
  }
  const auto reg = TraceRegistry::build(corpus);
  CHECK(reg.entries().size() == 3);
  const auto keys = reg.pooled_keys();
  REQUIRE(keys.size() == 1);
  CHECK(keys[0] == RegistryKey{"chem", "m/react", "task-mid"});
  const auto& entry = reg.entries().at(keys[0]);
  CHECK(entry.trials == 5);
  CHECK(entry.successes == 2);
  CHECK(entry.success_rate == doctest::Approx(0.4));
  CHECK(reg.pool(keys[0], PoolKind::kSuccess).size() == 2);
  CHECK(reg.pool(keys[0], PoolKind::kFailed).size() == 3);
  for (const auto* t : reg.pool(keys[0], PoolKind::kFailed)) CHECK(key_of(*t) == keys[0]);
  CHECK(reg.pool(RegistryKey{"chem", "m/react", "task-easy"}, PoolKind::kSuccess).empty());

  const auto& drawn = reg.sample(keys[0], InterventionSpec{PoolKind::kSuccess, -1, 3});
  CHECK(drawn.outcome_score == 1.0);
  CHECK_THROWS_AS(reg.sample(keys[0], InterventionSpec{PoolKind::kSuccess, 9, 3}), SamplingError);

  const auto back = TraceRegistry::from_json(nlohmann::json::parse(reg.to_json().dump()), corpus);
  CHECK(back.pooled_keys() == keys);
  CHECK(back.to_json().dump() == reg.to_json().dump());

  auto doc = nlohmann::json::parse(reg.to_json().dump());
  doc["pools"][0]["success_traces"].push_back("ghost");
  CHECK_THROWS_AS(TraceRegistry::from_json(doc, corpus), ValidationError);
}

TEST_CASE("seed history in replay mode") {
  const auto src = testgen::tool_trace("src", 3);
  SUBCASE("k = 1") {
    ReplayExecutor replay(src);
    const auto h = build_seed_history(src, InterventionSpec{PoolKind::kSuccess, 1, 0}, replay);
    REQUIRE(h.messages.size() == 3);
    CHECK(h.messages[0].content == "Determine the pH of sample S1.");
    CHECK(h.messages[1].content == "step 1");
    CHECK(h.messages[2].role == Role::kObservation);
    CHECK(h.messages[2].content == "pH of S1 is 7");
    CHECK_FALSE(check_interleaving(h));
    for (std::size_t i = 0; i < h.messages.size(); ++i) CHECK(h.messages[i].index == static_cast<int>(i));
  }
  SUBCASE("k = -1") {
    ReplayExecutor replay(src);
    const auto h = build_seed_history(src, InterventionSpec{PoolKind::kFailed, -1, 0}, replay);
    REQUIRE(h.messages.size() == 5);
    CHECK(h.messages[3].content == "step 2");
    CHECK(h.messages[4].content == "pH of S2 is 8");
  }
  SUBCASE("turn without tool calls") {
    const auto bare = bare_turns("bare", 2);
    ReplayExecutor replay(bare);
    const auto h = build_seed_history(bare, InterventionSpec{PoolKind::kSuccess, 2, 0}, replay);
    CHECK(h.messages.size() == 3);
    CHECK_FALSE(check_interleaving(h));
  }
  SUBCASE("deterministic output") {
    ReplayExecutor r1(src), r2(src);
    const InterventionSpec spec{PoolKind::kSuccess, 2, 5};
    const auto a = to_json(build_seed_history(src, spec, r1), src).dump();
    const auto b = to_json(build_seed_history(src, spec, r2), src).dump();
    CHECK(a == b);
    const auto doc = nlohmann::json::parse(a);
    CHECK(doc["trace_id"] == "src#seed-success-k2-s5");
    CHECK(doc["intervention"]["continuation_temperature"] == 0.7);
    CHECK(trace::trace_from_json(doc).messages.size() == 5);
  }
  SUBCASE("ineligible") {
    ReplayExecutor replay(src);
    CHECK_THROWS_AS(build_seed_history(src, InterventionSpec{PoolKind::kSuccess, -3, 0}, replay), DomainError);
  }
  SUBCASE("replay mismatch") {
    ReplayExecutor replay(src);
    CHECK_THROWS_AS(replay.execute(trace::ToolCall{"other_tool", {}}), InterventionError);
  }
}

TEST_CASE("interleaving check catches a missing observation") {
  const auto src = testgen::tool_trace("src", 2);
  ReplayExecutor replay(src);
  auto h = build_seed_history(src, InterventionSpec{PoolKind::kSuccess, 2, 0}, replay);
  h.messages.erase(h.messages.begin() + 2);
  CHECK(check_interleaving(h));
  h.messages.erase(h.messages.begin());
  CHECK(check_interleaving(h));
}

TEST_CASE("live executor") {
  httplib::Server server;
  std::vector<std::string> calls;
  server.Post("/env/execute", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    calls.push_back(body["tool"].get<std::string>() + ":" + body["arguments"]["label"].get<std::string>());
    if (body["arguments"]["label"] == "S2") {
      res.set_content(R"({"error": "instrument offline"})", "application/json");
      return;
    }
    res.set_content(R"({"observation": "live pH 7.1"})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const auto src = testgen::tool_trace("src", 2);
  auto exec = make_http_executor("http://127.0.0.1:" + std::to_string(port) + "/env/");
  const auto h = build_seed_history(src, InterventionSpec{PoolKind::kSuccess, 1, 0}, *exec);
  CHECK(h.messages.back().content == "live pH 7.1");
  try {
    build_seed_history(src, InterventionSpec{PoolKind::kSuccess, 2, 0}, *exec);
    FAIL("expected an intervention error");
  } catch (const InterventionError& e) {
    CHECK(std::string(e.what()).find("measure_pH") != std::string::npos);
    CHECK(std::string(e.what()).find("instrument offline") != std::string::npos);
  }
  CHECK(calls == std::vector<std::string>{"measure_pH:S1", "measure_pH:S1", "measure_pH:S2"});
  server.stop();
  th.join();
  CHECK_THROWS_AS(make_http_executor("ftp://x"), ValidationError);
}
