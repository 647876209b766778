#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "epitrace/epi_graph.hpp"
#include "epitrace/trace.hpp"

namespace epitrace::annotate {

struct WindowSpec {
  std::size_t size = 20;
  std::size_t stride = 15;
};

// Half-open range [begin, end) of positions in a message list.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const IndexRange&) const = default;
};

// Throws DomainError for a zero size or stride, or stride > size.
void check(const WindowSpec& spec);

// Windows start at 0 and advance by `stride`; the first window reaching the
// end of the list is the last one.
std::vector<IndexRange> make_windows(std::size_t message_count, const WindowSpec& spec);

struct AnnotatorConfig {
  std::string endpoint;
  std::string model_name;
  std::string api_token;
  double temperature = 0.7;
  int max_retries = 2;
  std::chrono::milliseconds request_timeout{120000};
  // Concurrent window requests per stage.
  std::size_t max_in_flight = 4;
  std::string prompt_version = "v1";
};

// Reads EPITRACE_ANNOTATOR_URL, EPITRACE_ANNOTATOR_TOKEN and
// EPITRACE_ANNOTATOR_MODEL on top of `base`.
AnnotatorConfig config_from_env(AnnotatorConfig base = {});

struct PromptSet {
  std::string_view version;
  std::string_view stage1_system;
  std::string_view stage1_user;
  std::string_view stage2_system;
  std::string_view stage2_user;
};

// Throws ValidationError for an unknown version.
const PromptSet& prompt_set(std::string_view version);
std::vector<std::string_view> prompt_versions();

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  double temperature = 0.0;
  std::vector<ChatMessage> messages;
};

nlohmann::ordered_json to_json(const ChatRequest& request);

// One chat-completion round trip. Implementations must be callable from
// several threads at once.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // Returns the text body of the completion; throws TransportError when the
  // endpoint cannot be reached or answers with a non-success status.
  virtual std::string complete(const ChatRequest& request) = 0;
};

// Posts OpenAI-style chat-completion requests to `config.endpoint`.
std::unique_ptr<ChatClient> make_http_client(const AnnotatorConfig& config);

// Pulls the text body out of a chat-completion response. Understands the
// OpenAI "choices" shape and the Anthropic "content" block shape, and falls
// back to the raw body.
std::string completion_text(std::string_view body);

enum class Stage { kNodes, kEdges };

struct StageRequest {
  std::string system_prompt;
  std::string user_prompt;
  nlohmann::ordered_json window_payload;
};

struct StageResponse {
  std::string raw;
  nlohmann::json document;
};

StageRequest build_stage1_request(const std::vector<trace::Message>& window, const PromptSet& prompts);
StageRequest build_stage2_request(const std::vector<trace::Message>& window,
                                  const std::vector<graph::EpiNode>& nodes, const PromptSet& prompts);

// First well-formed JSON object in `text` that carries the stage's array key
// ("nodes" or "edges"). Surrounding prose and code fences are ignored.
std::optional<nlohmann::json> extract_stage_document(std::string_view text, Stage stage);

// Sends the request, retrying identical requests on unparseable output.
StageResponse run_stage(const StageRequest& request, Stage stage, const AnnotatorConfig& config,
                        ChatClient& client);

std::vector<graph::EpiNode> run_stage1(const std::vector<trace::Message>& window,
                                       const AnnotatorConfig& config, ChatClient& client);
std::vector<graph::EpiEdge> run_stage2(const std::vector<trace::Message>& window,
                                       const std::vector<graph::EpiNode>& nodes,
                                       const AnnotatorConfig& config, ChatClient& client);

struct AnnotationResult {
  graph::EpistemicGraph graph;
  graph::WarningLedger ledger;
  bool discarded = false;
};

// Node labeling over all windows, merge, automatic evidence for unlabeled
// observations, edge construction over the same windows, edge merge, and
// validation. The ledger lists pipeline repairs before validation entries.
AnnotationResult annotate_trace(const trace::Trace& trace, const AnnotatorConfig& config,
                                const WindowSpec& spec, ChatClient& client,
                                const graph::ValidationOptions& validation = {});

}  // namespace epitrace::annotate
