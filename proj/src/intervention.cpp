#include "epitrace/intervention.hpp"

#include <httplib.h>

#include <algorithm>
#include <random>
#include <regex>

namespace epitrace::intervention {

using nlohmann::json;
using nlohmann::ordered_json;
using trace::Message;
using trace::Role;
using trace::Trace;

std::string_view to_string(PoolKind kind) { return kind == PoolKind::kSuccess ? "success" : "failed"; }

std::optional<PoolKind> parse_pool_kind(std::string_view text) {
  if (text == "success") return PoolKind::kSuccess;
  if (text == "failed" || text == "failure") return PoolKind::kFailed;
  return std::nullopt;
}

bool eligible(const Trace& trace, int k) {
  const auto turns = static_cast<long long>(trace::assistant_turns(trace).size());
  if (k > 0) return turns >= k;
  if (k < 0) return turns > -static_cast<long long>(k);
  return false;
}

std::vector<const Trace*> eligible_pool(std::span<const Trace* const> pool, int k) {
  std::vector<const Trace*> out;
  std::copy_if(pool.begin(), pool.end(), std::back_inserter(out), [k](const Trace* t) { return eligible(*t, k); });
  return out;
}

const Trace& sample_trace(std::span<const Trace* const> pool, std::uint64_t seed, std::string_view context) {
  if (pool.empty()) {
    throw SamplingError("no eligible trace to sample" + (context.empty() ? std::string() : " for " + std::string(context)));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return *pool[pick(rng)];
}

std::string agent_of(const Trace& trace) {
  return trace.scaffold.empty() ? trace.model : trace.model + "/" + trace.scaffold;
}

RegistryKey key_of(const Trace& trace) { return RegistryKey{trace.environment, agent_of(trace), trace.task_id}; }

std::string to_string(const RegistryKey& key) {
  return "(" + key.environment + ", " + key.agent + ", " + key.task_id + ")";
}

TraceRegistry TraceRegistry::build(const trace::TraceCorpus& corpus, const RegistryOptions& options) {
  TraceRegistry reg;
  reg.corpus_ = &corpus;
  reg.options_ = options;
  for (const auto& t : corpus.traces()) {
    auto& entry = reg.entries_[key_of(t)];
    ++entry.trials;
    if (t.outcome_score >= options.success_threshold) {
      ++entry.successes;
      entry.success_traces.push_back(t.trace_id);
    } else {
      entry.failed_traces.push_back(t.trace_id);
    }
  }
  for (auto& [key, entry] : reg.entries_) {
    entry.success_rate = static_cast<double>(entry.successes) / static_cast<double>(entry.trials);
    entry.pooled = entry.success_rate >= options.min_success_rate && entry.success_rate <= options.max_success_rate;
  }
  return reg;
}

TraceRegistry TraceRegistry::from_json(const json& doc, const trace::TraceCorpus& corpus) {
  TraceRegistry reg;
  reg.corpus_ = &corpus;
  try {
    const auto& opt = doc.at("options");
    reg.options_.success_threshold = opt.at("success_threshold").get<double>();
    reg.options_.min_success_rate = opt.at("min_success_rate").get<double>();
    reg.options_.max_success_rate = opt.at("max_success_rate").get<double>();
    for (const auto& p : doc.at("pools")) {
      RegistryKey key{p.at("environment").get<std::string>(), p.at("agent").get<std::string>(),
                      p.at("task_id").get<std::string>()};
      PoolEntry entry;
      entry.trials = p.at("trials").get<std::size_t>();
      entry.successes = p.at("successes").get<std::size_t>();
      entry.success_rate = p.at("success_rate").get<double>();
      entry.pooled = p.at("pooled").get<bool>();
      entry.success_traces = p.at("success_traces").get<std::vector<std::string>>();
      entry.failed_traces = p.at("failed_traces").get<std::vector<std::string>>();
      for (const auto* ids : {&entry.success_traces, &entry.failed_traces}) {
        for (const auto& id : *ids) {
          const auto* t = corpus.find(id);
          if (!t) throw ValidationError("registry references unknown trace '" + id + "'");
          if (key_of(*t) != key) {
            throw ValidationError("trace '" + id + "' does not belong to registry key " + to_string(key));
          }
        }
      }
      reg.entries_.emplace(std::move(key), std::move(entry));
    }
  } catch (const json::exception& e) {
    throw ParseError("registry", e.what());
  }
  return reg;
}

std::vector<RegistryKey> TraceRegistry::pooled_keys() const {
  std::vector<RegistryKey> out;
  for (const auto& [key, entry] : entries_) {
    if (entry.pooled) out.push_back(key);
  }
  return out;
}

std::vector<const Trace*> TraceRegistry::pool(const RegistryKey& key, PoolKind kind) const {
  std::vector<const Trace*> out;
  const auto it = entries_.find(key);
  if (it == entries_.end() || !it->second.pooled || !corpus_) return out;
  const auto& ids = kind == PoolKind::kSuccess ? it->second.success_traces : it->second.failed_traces;
  for (const auto& id : ids) out.push_back(&corpus_->at(id));
  return out;
}

const Trace& TraceRegistry::sample(const RegistryKey& key, const InterventionSpec& spec) const {
  const auto candidates = eligible_pool(pool(key, spec.kind), spec.k);
  return sample_trace(candidates, spec.seed,
                      to_string(key) + " " + std::string(to_string(spec.kind)) + " pool at k=" + std::to_string(spec.k));
}

ordered_json TraceRegistry::to_json() const {
  ordered_json doc;
  doc["options"] = {{"success_threshold", options_.success_threshold},
                    {"min_success_rate", options_.min_success_rate},
                    {"max_success_rate", options_.max_success_rate}};
  auto& pools = doc["pools"] = ordered_json::array();
  for (const auto& [key, e] : entries_) {
    pools.push_back({{"environment", key.environment},
                     {"agent", key.agent},
                     {"task_id", key.task_id},
                     {"trials", e.trials},
                     {"successes", e.successes},
                     {"success_rate", e.success_rate},
                     {"pooled", e.pooled},
                     {"success_traces", e.success_traces},
                     {"failed_traces", e.failed_traces}});
  }
  return doc;
}

ReplayExecutor::ReplayExecutor(const Trace& source) {
  const auto& msgs = source.messages;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    if (msgs[i].role != Role::kAssistant) continue;
    std::vector<std::string> observations;
    for (std::size_t j = i + 1; j < msgs.size() && msgs[j].role != Role::kAssistant; ++j) {
      if (msgs[j].role == Role::kObservation) observations.push_back(msgs[j].content);
    }
    for (std::size_t c = 0; c < msgs[i].tool_calls.size(); ++c) {
      recorded_.push_back(Recorded{msgs[i].tool_calls[c].name, c < observations.size() ? observations[c] : ""});
    }
  }
}

std::string ReplayExecutor::execute(const trace::ToolCall& call) {
  if (next_ >= recorded_.size()) {
    throw InterventionError("replay has no recorded observation for call '" + call.name + "'");
  }
  const auto& rec = recorded_[next_];
  if (rec.tool != call.name) {
    throw InterventionError("replay expected a call to '" + rec.tool + "' but got '" + call.name + "'");
  }
  ++next_;
  return rec.observation;
}

namespace {

class HttpToolExecutor final : public ToolExecutor {
 public:
  HttpToolExecutor(const std::string& base_url, std::chrono::milliseconds timeout) : timeout_(timeout) {
    static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(base_url, m, pattern)) {
      throw ValidationError("executor base URL is not an http(s) URL: " + base_url);
    }
    origin_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : std::string();
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/execute";
  }

  std::string execute(const trace::ToolCall& call) override {
    httplib::Client client(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    ordered_json body = {{"tool", call.name}, {"arguments", call.arguments}};
    auto res = client.Post(path_, body.dump(), "application/json");
    const auto label = call.name + " " + call.arguments.dump();
    if (!res) throw InterventionError("tool call " + label + " failed: " + httplib::to_string(res.error()));
    const auto doc = json::parse(res->body, nullptr, false);
    if (res->status < 200 || res->status >= 300) {
      std::string detail = doc.is_object() && doc.contains("error") ? doc["error"].dump() : res->body.substr(0, 200);
      throw InterventionError("tool call " + label + " returned HTTP " + std::to_string(res->status) + ": " + detail);
    }
    if (doc.is_object() && doc.contains("error")) {
      throw InterventionError("tool call " + label + " failed: " + doc["error"].dump());
    }
    if (!doc.is_object() || !doc.contains("observation") || !doc["observation"].is_string()) {
      throw InterventionError("tool call " + label + " returned no observation");
    }
    return doc["observation"].get<std::string>();
  }

 private:
  std::string origin_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

}  // namespace

std::unique_ptr<ToolExecutor> make_http_executor(const std::string& base_url, std::chrono::milliseconds timeout) {
  return std::make_unique<HttpToolExecutor>(base_url, timeout);
}

SeedHistory build_seed_history(const Trace& source, const InterventionSpec& spec, ToolExecutor& executor) {
  if (!eligible(source, spec.k)) {
    throw DomainError("trace '" + source.trace_id + "' is not eligible for k=" + std::to_string(spec.k));
  }
  const auto task = std::find_if(source.messages.begin(), source.messages.end(),
                                 [](const Message& m) { return m.is_task_description; });
  if (task == source.messages.end()) {
    throw InterventionError("trace '" + source.trace_id + "' has no task description message");
  }
  SeedHistory h;
  h.source_trace_id = source.trace_id;
  h.spec = spec;
  h.messages.push_back(*task);
  const auto turns = trace::assistant_turns(source);
  for (auto turn : slice(std::span<const Message>(turns), spec.k)) {
    const auto calls = turn.tool_calls;
    h.messages.push_back(std::move(turn));
    for (const auto& call : calls) {
      Message obs;
      obs.role = Role::kObservation;
      obs.content = executor.execute(call);
      h.messages.push_back(std::move(obs));
    }
  }
  for (std::size_t i = 0; i < h.messages.size(); ++i) h.messages[i].index = static_cast<int>(i);
  return h;
}

std::optional<std::string> check_interleaving(const SeedHistory& history) {
  const auto& m = history.messages;
  if (m.empty() || !m.front().is_task_description) return "history does not start with the task prompt";
  std::size_t i = 1;
  while (i < m.size()) {
    if (m[i].role != Role::kAssistant) return "message " + std::to_string(i) + " is not an assistant turn";
    const auto calls = m[i].tool_calls.size();
    for (std::size_t c = 1; c <= calls; ++c) {
      if (i + c >= m.size() || m[i + c].role != Role::kObservation) {
        return "tool call " + std::to_string(c - 1) + " of message " + std::to_string(i) + " lacks its observation";
      }
    }
    i += calls + 1;
  }
  return std::nullopt;
}

ordered_json to_json(const SeedHistory& history, const Trace& source) {
  Trace t = source;
  t.trace_id = source.trace_id + "#seed-" + std::string(to_string(history.spec.kind)) + "-k" +
               std::to_string(history.spec.k) + "-s" + std::to_string(history.spec.seed);
  t.messages = history.messages;
  auto doc = trace::to_json(t);
  doc["intervention"] = {{"source_trace_id", history.source_trace_id},
                         {"kind", to_string(history.spec.kind)},
                         {"k", history.spec.k},
                         {"seed", history.spec.seed},
                         {"continuation_temperature", history.continuation_temperature}};
  return doc;
}

}  // namespace epitrace::intervention
