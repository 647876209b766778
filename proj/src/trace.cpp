#include "epitrace/trace.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "epitrace/error.hpp"

namespace epitrace::trace {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

const json& require(const json& obj, const char* key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    throw ParseError(path + key, "missing required field");
  }
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
  const auto& value = require(obj, key, path);
  if (!value.is_string()) throw ParseError(path + key, "expected a string");
  return value.get<std::string>();
}

long long require_integer(const json& obj, const char* key, const std::string& path) {
  const auto& value = require(obj, key, path);
  if (!value.is_number_integer()) throw ParseError(path + key, "expected an integer");
  return value.get<long long>();
}

double require_number(const json& obj, const char* key, const std::string& path) {
  const auto& value = require(obj, key, path);
  if (!value.is_number()) throw ParseError(path + key, "expected a number");
  return value.get<double>();
}

std::optional<bool> optional_bool(const json& obj, const char* key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_boolean()) throw ParseError(path + key, "expected a boolean");
  return it->get<bool>();
}

ToolCall parse_tool_call(const json& doc, const std::string& path) {
  if (!doc.is_object()) throw ParseError(path, "expected an object");
  ToolCall call;
  call.name = require_string(doc, "name", path + ".");
  if (const auto it = doc.find("arguments"); it != doc.end() && !it->is_null()) {
    if (it->is_string()) {
      // Providers often ship arguments as an encoded JSON string.
      try {
        call.arguments = ordered_json::parse(it->get<std::string>());
      } catch (const json::parse_error&) {
        throw ParseError(path + ".arguments", "string arguments are not valid JSON");
      }
    } else {
      call.arguments = ordered_json::parse(it->dump());
    }
    if (!call.arguments.is_object()) {
      throw ParseError(path + ".arguments", "expected a key-value object");
    }
  }
  return call;
}

TokenLogprob parse_token(const json& doc, const std::string& path) {
  if (!doc.is_object()) throw ParseError(path, "expected an object");
  TokenLogprob tok;
  tok.token = require_string(doc, "token", path + ".");
  tok.logprob = require_number(doc, "logprob", path + ".");
  if (tok.logprob > 0.0) throw ParseError(path + ".logprob", "log-probability must be <= 0");
  tok.is_special = optional_bool(doc, "is_special", path + ".").value_or(false);
  return tok;
}

struct RawFlags {
  std::optional<bool> task_description;
  std::optional<bool> iteration_limit;
};

Message parse_message(const json& doc, const std::string& path, RawFlags& flags) {
  if (!doc.is_object()) throw ParseError(path, "expected an object");
  const std::string prefix = path + ".";
  Message msg;
  msg.index = static_cast<int>(require_integer(doc, "index", prefix));
  const auto role_text = require_string(doc, "role", prefix);
  const auto role = parse_role(role_text);
  if (!role) throw ParseError(prefix + "role", "unknown role '" + role_text + "'");
  msg.role = *role;
  const auto& content = require(doc, "content", prefix);
  if (!content.is_string()) throw ParseError(prefix + "content", "expected a string");
  msg.content = content.get<std::string>();

  if (const auto it = doc.find("tool_calls"); it != doc.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError(prefix + "tool_calls", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      msg.tool_calls.push_back(
          parse_tool_call((*it)[i], prefix + "tool_calls[" + std::to_string(i) + "]"));
    }
  }
  if (const auto it = doc.find("token_logprobs"); it != doc.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError(prefix + "token_logprobs", "expected an array");
    std::vector<TokenLogprob> tokens;
    tokens.reserve(it->size());
    for (std::size_t i = 0; i < it->size(); ++i) {
      tokens.push_back(
          parse_token((*it)[i], prefix + "token_logprobs[" + std::to_string(i) + "]"));
    }
    msg.token_logprobs = std::move(tokens);
  }
  flags.task_description = optional_bool(doc, "is_task_description", prefix);
  flags.iteration_limit = optional_bool(doc, "is_iteration_limit_error", prefix);
  return msg;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
    case Role::kObservation: return "observation";
  }
  return "unknown";
}

std::optional<Role> parse_role(std::string_view text) {
  if (text == "system") return Role::kSystem;
  if (text == "user") return Role::kUser;
  if (text == "assistant") return Role::kAssistant;
  if (text == "observation" || text == "tool" || text == "function") return Role::kObservation;
  return std::nullopt;
}

Trace trace_from_json(const json& doc, const IngestOptions& options) {
  if (!doc.is_object()) throw ParseError("<root>", "expected an object");
  Trace trace;
  trace.trace_id = require_string(doc, "trace_id", "");
  if (trace.trace_id.empty()) throw ParseError("trace_id", "must be non-empty");
  trace.model = require_string(doc, "model", "");
  trace.environment = require_string(doc, "environment", "");
  const auto scope = require_integer(doc, "scope", "");
  if (scope < 1) throw ParseError("scope", "must be >= 1");
  trace.scope = static_cast<int>(scope);
  trace.scaffold = require_string(doc, "scaffold", "");
  trace.task_id = require_string(doc, "task_id", "");
  const auto trial = require_integer(doc, "trial", "");
  if (trial < 0) throw ParseError("trial", "must be >= 0");
  trace.trial = static_cast<int>(trial);
  trace.outcome_score = require_number(doc, "outcome_score", "");
  if (trace.outcome_score < 0.0 || trace.outcome_score > 1.0) {
    throw ParseError("outcome_score", "must lie in [0, 1]");
  }

  const auto& messages = require(doc, "messages", "");
  if (!messages.is_array()) throw ParseError("messages", "expected an array");
  std::vector<RawFlags> flags(messages.size());
  trace.messages.reserve(messages.size());
  for (std::size_t i = 0; i < messages.size(); ++i) {
    trace.messages.push_back(
        parse_message(messages[i], "messages[" + std::to_string(i) + "]", flags[i]));
  }

  if (trace.messages.empty()) throw StructuralError("trace '" + trace.trace_id + "' has no messages");
  for (std::size_t i = 0; i < trace.messages.size(); ++i) {
    const auto& msg = trace.messages[i];
    if (msg.index != static_cast<int>(i)) {
      throw StructuralError("trace '" + trace.trace_id + "': message indices must be consecutive from 0; position " +
                            std::to_string(i) + " has index " + std::to_string(msg.index));
    }
    if (!msg.tool_calls.empty() && msg.role != Role::kAssistant) {
      throw StructuralError("trace '" + trace.trace_id + "': message " + std::to_string(i) +
                            " carries tool_calls but is not an assistant message");
    }
  }

  const bool doc_marks_task = std::any_of(flags.begin(), flags.end(),
                                          [](const RawFlags& f) { return f.task_description.has_value(); });
  if (options.task_description_indices) {
    for (auto& msg : trace.messages) {
      msg.is_task_description = options.task_description_indices->contains(msg.index);
    }
  } else if (doc_marks_task) {
    for (std::size_t i = 0; i < trace.messages.size(); ++i) {
      trace.messages[i].is_task_description = flags[i].task_description.value_or(false);
    }
  } else {
    const auto first_user = std::find_if(trace.messages.begin(), trace.messages.end(),
                                         [](const Message& m) { return m.role == Role::kUser; });
    if (first_user != trace.messages.end()) first_user->is_task_description = true;
  }

  for (std::size_t i = 0; i < trace.messages.size(); ++i) {
    auto& msg = trace.messages[i];
    if (flags[i].iteration_limit) {
      msg.is_iteration_limit_error = *flags[i].iteration_limit;
    } else {
      msg.is_iteration_limit_error =
          options.iteration_limit_sentinels.contains(std::string(trim(msg.content)));
    }
  }
  return trace;
}

Trace parse_trace(std::string_view serialized, const IngestOptions& options) {
  json doc;
  try {
    doc = json::parse(serialized);
  } catch (const json::parse_error& e) {
    throw ParseError("<document>", e.what());
  }
  return trace_from_json(doc, options);
}

ordered_json to_json(const Trace& trace) {
  ordered_json doc;
  doc["trace_id"] = trace.trace_id;
  doc["model"] = trace.model;
  doc["environment"] = trace.environment;
  doc["scope"] = trace.scope;
  doc["scaffold"] = trace.scaffold;
  doc["task_id"] = trace.task_id;
  doc["trial"] = trace.trial;
  doc["outcome_score"] = trace.outcome_score;
  auto& messages = doc["messages"] = ordered_json::array();
  for (const auto& msg : trace.messages) {
    ordered_json m;
    m["index"] = msg.index;
    m["role"] = to_string(msg.role);
    m["content"] = msg.content;
    if (!msg.tool_calls.empty()) {
      auto& calls = m["tool_calls"] = ordered_json::array();
      for (const auto& call : msg.tool_calls) {
        calls.push_back({{"name", call.name}, {"arguments", call.arguments}});
      }
    }
    if (msg.token_logprobs) {
      auto& tokens = m["token_logprobs"] = ordered_json::array();
      for (const auto& tok : *msg.token_logprobs) {
        tokens.push_back({{"token", tok.token}, {"logprob", tok.logprob}, {"is_special", tok.is_special}});
      }
    }
    m["is_task_description"] = msg.is_task_description;
    m["is_iteration_limit_error"] = msg.is_iteration_limit_error;
    messages.push_back(std::move(m));
  }
  return doc;
}

std::string render_trace(const Trace& trace) { return to_json(trace).dump(2); }

std::vector<Message> annotatable_messages(const Trace& trace, AnnotationMode mode) {
  std::vector<Message> out;
  for (const auto& msg : trace.messages) {
    if (msg.role == Role::kSystem || msg.is_iteration_limit_error) continue;
    if (mode == AnnotationMode::kMarker &&
        (msg.role == Role::kObservation || msg.is_task_description)) {
      continue;
    }
    out.push_back(msg);
  }
  return out;
}

std::vector<Message> assistant_turns(const Trace& trace) {
  std::vector<Message> out;
  std::copy_if(trace.messages.begin(), trace.messages.end(), std::back_inserter(out),
               [](const Message& m) { return m.role == Role::kAssistant; });
  return out;
}

std::optional<GroupField> parse_group_field(std::string_view text) {
  if (text == "model") return GroupField::kModel;
  if (text == "environment") return GroupField::kEnvironment;
  if (text == "scope") return GroupField::kScope;
  if (text == "scaffold") return GroupField::kScaffold;
  if (text == "task_id" || text == "task") return GroupField::kTaskId;
  return std::nullopt;
}

std::string_view to_string(GroupField field) {
  switch (field) {
    case GroupField::kModel: return "model";
    case GroupField::kEnvironment: return "environment";
    case GroupField::kScope: return "scope";
    case GroupField::kScaffold: return "scaffold";
    case GroupField::kTaskId: return "task_id";
  }
  return "unknown";
}

std::string field_value(const Trace& trace, GroupField field) {
  switch (field) {
    case GroupField::kModel: return trace.model;
    case GroupField::kEnvironment: return trace.environment;
    case GroupField::kScope: return std::to_string(trace.scope);
    case GroupField::kScaffold: return trace.scaffold;
    case GroupField::kTaskId: return trace.task_id;
  }
  return {};
}

std::string group_label(const Trace& trace, std::span<const GroupField> fields) {
  if (fields.empty()) return "all";
  std::string label;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) label += '|';
    label += field_value(trace, fields[i]);
  }
  return label;
}

TraceCorpus::TraceCorpus(std::vector<Trace> traces) {
  for (auto& t : traces) add(std::move(t));
}

void TraceCorpus::add(Trace trace) {
  if (by_id_.contains(trace.trace_id)) {
    throw StructuralError("duplicate trace_id '" + trace.trace_id + "' in corpus");
  }
  const auto pos = traces_.size();
  by_id_.emplace(trace.trace_id, pos);
  by_key_.emplace(CorpusKey{trace.model, trace.environment, trace.scope, trace.scaffold, trace.task_id}, pos);
  traces_.push_back(std::move(trace));
}

const Trace* TraceCorpus::find(std::string_view trace_id) const {
  const auto it = by_id_.find(trace_id);
  return it == by_id_.end() ? nullptr : &traces_[it->second];
}

const Trace& TraceCorpus::at(std::string_view trace_id) const {
  if (const auto* t = find(trace_id)) return *t;
  throw StructuralError("unknown trace_id '" + std::string(trace_id) + "'");
}

std::vector<const Trace*> TraceCorpus::lookup(const CorpusKey& key) const {
  std::vector<const Trace*> out;
  const auto [first, last] = by_key_.equal_range(key);
  for (auto it = first; it != last; ++it) out.push_back(&traces_[it->second]);
  return out;
}

std::vector<Trace> parse_trace_stream(std::string_view ndjson, const IngestOptions& options) {
  std::vector<Trace> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= ndjson.size()) {
    const auto end = std::min(ndjson.find('\n', pos), ndjson.size());
    const auto line = trim(ndjson.substr(pos, end - pos));
    ++line_no;
    if (!line.empty()) {
      try {
        out.push_back(parse_trace(line, options));
      } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.field(), e.what());
      }
    }
    if (end == ndjson.size()) break;
    pos = end + 1;
  }
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool is_stream_file(const std::filesystem::path& path) {
  const auto ext = path.extension();
  return ext == ".jsonl" || ext == ".ndjson";
}

}  // namespace

TraceCorpus load_corpus(const std::filesystem::path& path, const IngestOptions& options) {
  TraceCorpus corpus;
  auto load_one = [&](const std::filesystem::path& file) {
    const auto text = read_file(file);
    if (is_stream_file(file)) {
      for (auto& t : parse_trace_stream(text, options)) corpus.add(std::move(t));
    } else {
      corpus.add(parse_trace(text, options));
    }
  };
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension();
      if (ext == ".json" || is_stream_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) load_one(f);
  } else {
    load_one(path);
  }
  return corpus;
}

}  // namespace epitrace::trace
