#pragma once

#include <string>
#include <utility>
#include <vector>

#include "epitrace/trace.hpp"

namespace testgen {

struct Msg {
  epitrace::trace::Role role;
  std::string content;
  std::vector<epitrace::trace::ToolCall> calls = {};
};

inline epitrace::trace::Trace make_trace(std::string id, const std::vector<Msg>& msgs, std::string model = "m",
                                         std::string environment = "env", std::string task = "task-1",
                                         double outcome = 1.0, int trial = 0) {
  epitrace::trace::Trace t;
  t.trace_id = std::move(id);
  t.model = std::move(model);
  t.environment = std::move(environment);
  t.scope = 1;
  t.scaffold = "react";
  t.task_id = std::move(task);
  t.trial = trial;
  t.outcome_score = outcome;
  bool seen_user = false;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    epitrace::trace::Message m;
    m.index = static_cast<int>(i);
    m.role = msgs[i].role;
    m.content = msgs[i].content;
    m.tool_calls = msgs[i].calls;
    if (m.role == epitrace::trace::Role::kUser && !seen_user) {
      m.is_task_description = true;
      seen_user = true;
    }
    t.messages.push_back(std::move(m));
  }
  return t;
}

inline epitrace::trace::ToolCall call(std::string name, nlohmann::ordered_json args = nlohmann::ordered_json::object()) {
  return epitrace::trace::ToolCall{std::move(name), std::move(args)};
}

// Task prompt followed by `turns` assistant turns, each calling one tool and
// receiving one observation.
inline epitrace::trace::Trace tool_trace(std::string id, int turns, std::string task = "task-1",
                                         double outcome = 1.0, std::string model = "m") {
  using epitrace::trace::Role;
  std::vector<Msg> msgs{{Role::kSystem, "You are an agent."}, {Role::kUser, "Determine the pH of sample S1."}};
  for (int i = 1; i <= turns; ++i) {
    const auto n = std::to_string(i);
    msgs.push_back({Role::kAssistant, "step " + n, {call("measure_pH", {{"label", "S" + n}})}});
    msgs.push_back({Role::kObservation, "pH of S" + n + " is " + std::to_string(6 + i)});
  }
  return make_trace(std::move(id), msgs, std::move(model), "chem", std::move(task), outcome);
}

}  // namespace testgen
