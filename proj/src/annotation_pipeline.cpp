#include "epitrace/annotation_pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <future>
#include <map>
#include <set>

#include "epitrace/error.hpp"

namespace epitrace::annotate {

using graph::EpiEdge;
using graph::EpiNode;
using graph::EpistemicGraph;
using graph::WarningCategory;
using nlohmann::json;
using nlohmann::ordered_json;

void check(const WindowSpec& spec) {
  if (spec.size == 0 || spec.stride == 0) throw DomainError("window size and stride must be positive");
  if (spec.stride > spec.size) throw DomainError("window stride must not exceed window size");
}

std::vector<IndexRange> make_windows(std::size_t message_count, const WindowSpec& spec) {
  check(spec);
  std::vector<IndexRange> out;
  for (std::size_t start = 0; start < message_count; start += spec.stride) {
    const auto end = std::min(start + spec.size, message_count);
    out.push_back(IndexRange{start, end});
    if (end >= message_count) break;
  }
  return out;
}

AnnotatorConfig config_from_env(AnnotatorConfig base) {
  if (const char* v = std::getenv("EPITRACE_ANNOTATOR_URL"); v && *v) base.endpoint = v;
  if (const char* v = std::getenv("EPITRACE_ANNOTATOR_TOKEN"); v && *v) base.api_token = v;
  if (const char* v = std::getenv("EPITRACE_ANNOTATOR_MODEL"); v && *v) base.model_name = v;
  return base;
}

ordered_json to_json(const ChatRequest& request) {
  ordered_json doc;
  doc["model"] = request.model;
  doc["temperature"] = request.temperature;
  auto& messages = doc["messages"] = ordered_json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return doc;
}

std::string completion_text(std::string_view body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error&) {
    return std::string(body);
  }
  if (!doc.is_object()) return std::string(body);
  if (const auto choices = doc.find("choices"); choices != doc.end() && choices->is_array() && !choices->empty()) {
    const auto& first = (*choices)[0];
    if (first.contains("message") && first["message"].contains("content") &&
        first["message"]["content"].is_string()) {
      return first["message"]["content"].get<std::string>();
    }
    if (first.contains("text") && first["text"].is_string()) return first["text"].get<std::string>();
  }
  if (const auto content = doc.find("content"); content != doc.end()) {
    if (content->is_string()) return content->get<std::string>();
    if (content->is_array()) {
      std::string text;
      for (const auto& block : *content) {
        if (block.is_object() && block.value("type", "") == "text" && block.contains("text")) {
          text += block["text"].get<std::string>();
        }
      }
      return text;
    }
  }
  return std::string(body);
}

namespace {

ordered_json window_payload(const std::vector<trace::Message>& window) {
  auto payload = ordered_json::array();
  for (const auto& m : window) {
    ordered_json item;
    item["msg_idx"] = m.index;
    item["role"] = trace::to_string(m.role);
    item["content"] = m.content;
    if (!m.tool_calls.empty()) {
      auto& calls = item["tool_calls"] = ordered_json::array();
      for (const auto& c : m.tool_calls) calls.push_back({{"name", c.name}, {"arguments", c.arguments}});
    }
    if (m.is_task_description) item["is_task_description"] = true;
    payload.push_back(std::move(item));
  }
  return payload;
}

// Position one past the JSON object that opens at `start`, or npos.
std::size_t object_end(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

const char* stage_key(Stage stage) { return stage == Stage::kNodes ? "nodes" : "edges"; }

// Checks the document decodes into the stage's item list; throws ParseError.
void decode_check(const json& doc, Stage stage) {
  if (stage == Stage::kNodes) {
    (void)graph::nodes_from_json(doc.at("nodes"));
  } else {
    (void)graph::edges_from_json(doc.at("edges"));
  }
}

std::size_t utf8_prefix_bytes(std::string_view text, std::size_t max_chars) {
  std::size_t chars = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto byte = static_cast<unsigned char>(text[i]);
    if ((byte & 0xC0) != 0x80) {
      if (chars == max_chars) return i;
      ++chars;
    }
  }
  return text.size();
}

template <typename Result, typename Fn>
std::vector<Result> run_bounded(std::size_t count, std::size_t max_in_flight, Fn fn) {
  std::vector<Result> results(count);
  const std::size_t batch = std::max<std::size_t>(1, max_in_flight);
  for (std::size_t first = 0; first < count; first += batch) {
    const auto last = std::min(first + batch, count);
    if (last - first == 1) {
      results[first] = fn(first);
      continue;
    }
    std::vector<std::future<Result>> pending;
    for (std::size_t i = first; i < last; ++i) pending.push_back(std::async(std::launch::async, fn, i));
    // Collect every future before rethrowing so no task outlives the call.
    std::exception_ptr failure;
    for (std::size_t i = first; i < last; ++i) {
      try {
        results[i] = pending[i - first].get();
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  return results;
}

}  // namespace

StageRequest build_stage1_request(const std::vector<trace::Message>& window, const PromptSet& prompts) {
  StageRequest request;
  request.system_prompt = std::string(prompts.stage1_system);
  request.window_payload = window_payload(window);
  request.user_prompt = std::string(prompts.stage1_user) + "\n\nMessages:\n" + request.window_payload.dump(2);
  return request;
}

StageRequest build_stage2_request(const std::vector<trace::Message>& window, const std::vector<EpiNode>& nodes,
                                  const PromptSet& prompts) {
  StageRequest request;
  request.system_prompt = std::string(prompts.stage2_system);
  request.window_payload = window_payload(window);
  auto node_list = ordered_json::array();
  for (const auto& n : nodes) {
    node_list.push_back({{"node_id", n.node_id},
                         {"type", n.type ? std::string(graph::to_string(*n.type)) : n.type_label},
                         {"time", n.time},
                         {"text", n.text}});
  }
  request.user_prompt = std::string(prompts.stage2_user) + "\n\nMessages:\n" + request.window_payload.dump(2) +
                        "\n\nNodes:\n" + node_list.dump(2);
  return request;
}

std::optional<json> extract_stage_document(std::string_view text, Stage stage) {
  const char* key = stage_key(stage);
  for (auto start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    const auto end = object_end(text, start);
    if (end == std::string_view::npos) continue;
    json doc = json::parse(text.substr(start, end - start), nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded() || !doc.is_object()) continue;
    const auto it = doc.find(key);
    if (it != doc.end() && it->is_array()) return doc;
  }
  return std::nullopt;
}

StageResponse run_stage(const StageRequest& request, Stage stage, const AnnotatorConfig& config,
                        ChatClient& client) {
  ChatRequest chat;
  chat.model = config.model_name;
  chat.temperature = config.temperature;
  chat.messages = {{"system", request.system_prompt}, {"user", request.user_prompt}};

  std::string last_raw;
  std::string last_problem;
  const int attempts = 1 + std::max(0, config.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    last_raw = client.complete(chat);
    auto doc = extract_stage_document(last_raw, stage);
    if (!doc) {
      last_problem = std::string("no JSON document with a \"") + stage_key(stage) + "\" array";
      continue;
    }
    try {
      decode_check(*doc, stage);
    } catch (const ParseError& e) {
      last_problem = e.what();
      continue;
    }
    return StageResponse{std::move(last_raw), std::move(*doc)};
  }
  throw AnnotationError("annotator output unusable after " + std::to_string(attempts) + " attempt(s): " +
                            last_problem,
                        last_raw);
}

std::vector<EpiNode> run_stage1(const std::vector<trace::Message>& window, const AnnotatorConfig& config,
                                ChatClient& client) {
  if (window.empty()) return {};
  const auto request = build_stage1_request(window, prompt_set(config.prompt_version));
  const auto response = run_stage(request, Stage::kNodes, config, client);
  return graph::nodes_from_json(response.document.at("nodes"));
}

std::vector<EpiEdge> run_stage2(const std::vector<trace::Message>& window, const std::vector<EpiNode>& nodes,
                                const AnnotatorConfig& config, ChatClient& client) {
  if (window.empty() || nodes.empty()) return {};
  const auto request = build_stage2_request(window, nodes, prompt_set(config.prompt_version));
  const auto response = run_stage(request, Stage::kEdges, config, client);
  return graph::edges_from_json(response.document.at("edges"));
}

AnnotationResult annotate_trace(const trace::Trace& trace, const AnnotatorConfig& config, const WindowSpec& spec,
                                ChatClient& client, const graph::ValidationOptions& validation) {
  AnnotationResult result;
  result.graph.trace_id = trace.trace_id;
  const auto messages = trace::annotatable_messages(trace, trace::AnnotationMode::kEpistemic);
  if (messages.empty()) return result;
  (void)prompt_set(config.prompt_version);

  const auto windows = make_windows(messages.size(), spec);
  auto window_messages = [&](std::size_t w) {
    return std::vector<trace::Message>(messages.begin() + static_cast<std::ptrdiff_t>(windows[w].begin),
                                       messages.begin() + static_cast<std::ptrdiff_t>(windows[w].end));
  };

  auto node_windows = run_bounded<std::vector<EpiNode>>(
      windows.size(), config.max_in_flight,
      [&](std::size_t w) { return run_stage1(window_messages(w), config, client); });

  std::vector<EpistemicGraph> fragments;
  fragments.reserve(windows.size() + 1);
  std::set<int> labeled_messages;
  for (auto& nodes : node_windows) {
    for (const auto& n : nodes) {
      for (const auto& s : n.support) labeled_messages.insert(s.msg_idx);
    }
    fragments.push_back(EpistemicGraph{trace.trace_id, std::move(nodes), {}});
  }

  // Tool responses are evidence even when the annotator skipped them.
  EpistemicGraph auto_evidence{trace.trace_id, {}, {}};
  for (const auto& m : messages) {
    if (m.role != trace::Role::kObservation || labeled_messages.contains(m.index)) continue;
    const auto id = "auto-E" + std::to_string(m.index);
    auto text = m.content.substr(0, utf8_prefix_bytes(m.content, 120));
    auto_evidence.nodes.push_back(graph::make_node(id, graph::NodeType::E, m.index, std::move(text),
                                                   {graph::Support{m.index, m.content}}));
    result.ledger.add(WarningCategory::kOtherStructural, id,
                      "evidence node added for unlabeled observation message " + std::to_string(m.index));
  }
  if (!auto_evidence.nodes.empty()) fragments.push_back(std::move(auto_evidence));

  auto merged = graph::merge_window_annotations(fragments);

  // Each window sees the merged nodes whose time falls inside its message span.
  struct Span {
    int first;
    int last;
    bool contains(int t) const { return t >= first && t <= last; }
  };
  std::vector<Span> spans;
  for (const auto& w : windows) spans.push_back(Span{messages[w.begin].index, messages[w.end - 1].index});
  std::map<std::string, int, std::less<>> node_time;
  for (const auto& n : merged.nodes) node_time.emplace(n.node_id, n.time);

  auto edge_windows = run_bounded<std::vector<EpiEdge>>(windows.size(), config.max_in_flight, [&](std::size_t w) {
    std::vector<EpiNode> visible;
    std::copy_if(merged.nodes.begin(), merged.nodes.end(), std::back_inserter(visible),
                 [&](const EpiNode& n) { return spans[w].contains(n.time); });
    return run_stage2(window_messages(w), visible, config, client);
  });

  for (std::size_t w = 0; w < edge_windows.size(); ++w) {
    auto& edges = edge_windows[w];
    std::vector<EpiEdge> kept;
    for (auto& e : edges) {
      const auto src = node_time.find(e.src);
      const auto dst = node_time.find(e.dst);
      // Unknown ids go through to validation, which reports them.
      if (src == node_time.end() || dst == node_time.end()) {
        kept.push_back(std::move(e));
        continue;
      }
      const bool shared = std::any_of(spans.begin(), spans.end(), [&](const Span& s) {
        return s.contains(src->second) && s.contains(dst->second);
      });
      if (!shared) {
        result.ledger.add(WarningCategory::kOtherStructural, graph::edge_label(e),
                          "endpoints share no annotation window; edge removed");
        continue;
      }
      kept.push_back(std::move(e));
    }
    edges = std::move(kept);
  }
  merged.edges = graph::merge_edges(edge_windows);

  auto validated = graph::validate_graph(merged, trace, validation);
  result.graph = std::move(validated.graph);
  result.ledger.append(validated.ledger);
  result.discarded = validated.discarded;
  return result;
}

}  // namespace epitrace::annotate
