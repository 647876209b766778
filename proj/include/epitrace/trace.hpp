#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace epitrace::trace {

enum class Role { kSystem, kUser, kAssistant, kObservation };

std::string_view to_string(Role role);
// Accepts "tool" and "function" as aliases of "observation".
std::optional<Role> parse_role(std::string_view text);

struct ToolCall {
  std::string name;
  // Argument values keep their JSON type; a call round-trips verbatim.
  nlohmann::ordered_json arguments = nlohmann::ordered_json::object();

  bool operator==(const ToolCall&) const = default;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  bool is_special = false;

  bool operator==(const TokenLogprob&) const = default;
};

struct Message {
  int index = 0;
  Role role = Role::kUser;
  std::string content;
  std::vector<ToolCall> tool_calls;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
  bool is_task_description = false;
  bool is_iteration_limit_error = false;

  bool operator==(const Message&) const = default;
};

struct Trace {
  std::string trace_id;
  std::string model;
  std::string environment;
  int scope = 1;
  std::string scaffold;
  std::string task_id;
  int trial = 0;
  double outcome_score = 0.0;
  std::vector<Message> messages;

  bool operator==(const Trace&) const = default;
};

// Ingest-time rules for documents that do not already carry the flags.
struct IngestOptions {
  // Message contents that mark an iteration-limit error (exact match after trimming).
  std::set<std::string> iteration_limit_sentinels = {
      "Agent stopped due to iteration limit or time limit.",
      "Maximum number of iterations reached.",
      "ERROR: iteration limit reached",
  };
  // When unset, the first user message is the task description. When set,
  // exactly these message indices are.
  std::optional<std::set<int>> task_description_indices;
};

// Parses one trace document in the canonical schema. Unknown fields are
// ignored. Flags present in the document are kept; the ingest rules only fill
// in what the document leaves unset.
Trace parse_trace(std::string_view serialized, const IngestOptions& options = {});
Trace trace_from_json(const nlohmann::json& doc, const IngestOptions& options = {});

nlohmann::ordered_json to_json(const Trace& trace);
std::string render_trace(const Trace& trace);

enum class AnnotationMode { kEpistemic, kMarker };

// Epistemic mode drops system and iteration-limit messages. Marker mode also
// drops observations and the task description.
std::vector<Message> annotatable_messages(const Trace& trace, AnnotationMode mode);

std::vector<Message> assistant_turns(const Trace& trace);

// Metadata fields a corpus can be grouped by.
enum class GroupField { kModel, kEnvironment, kScope, kScaffold, kTaskId };

std::optional<GroupField> parse_group_field(std::string_view text);
std::string_view to_string(GroupField field);
std::string field_value(const Trace& trace, GroupField field);
// Values of `fields` joined with '|'; an empty field list yields "all".
std::string group_label(const Trace& trace, std::span<const GroupField> fields);

struct CorpusKey {
  std::string model;
  std::string environment;
  int scope = 1;
  std::string scaffold;
  std::string task_id;

  auto operator<=>(const CorpusKey&) const = default;
};

class TraceCorpus {
 public:
  TraceCorpus() = default;
  explicit TraceCorpus(std::vector<Trace> traces);

  // Throws StructuralError on a duplicate trace_id.
  void add(Trace trace);

  const Trace* find(std::string_view trace_id) const;
  const Trace& at(std::string_view trace_id) const;
  std::vector<const Trace*> lookup(const CorpusKey& key) const;

  const std::vector<Trace>& traces() const noexcept { return traces_; }
  std::size_t size() const noexcept { return traces_.size(); }
  bool empty() const noexcept { return traces_.empty(); }

 private:
  std::vector<Trace> traces_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
  std::multimap<CorpusKey, std::size_t> by_key_;
};

// Loads a directory of *.json trace files, a single trace file, or a
// newline-delimited stream (*.jsonl / *.ndjson).
TraceCorpus load_corpus(const std::filesystem::path& path, const IngestOptions& options = {});
std::vector<Trace> parse_trace_stream(std::string_view ndjson, const IngestOptions& options = {});

}  // namespace epitrace::trace
