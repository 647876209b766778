#include <httplib.h>

#include <regex>

#include "epitrace/annotation_pipeline.hpp"
#include "epitrace/error.hpp"

namespace epitrace::annotate {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) throw ValidationError("annotator endpoint is not an http(s) URL: " + url);
  Endpoint out{m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (url.rfind("https://", 0) == 0) throw ValidationError("built without TLS support; cannot reach " + url);
#endif
  return out;
}

class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(const AnnotatorConfig& config) : config_(config), endpoint_(split_url(config.endpoint)) {}

  std::string complete(const ChatRequest& request) override {
    // httplib clients are not safe to share across threads; one per call.
    httplib::Client client(endpoint_.origin);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config_.request_timeout);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(config_.request_timeout - seconds);
    client.set_connection_timeout(seconds.count(), usec.count());
    client.set_read_timeout(seconds.count(), usec.count());
    client.set_write_timeout(seconds.count(), usec.count());
    httplib::Headers headers;
    if (!config_.api_token.empty()) headers.emplace("Authorization", "Bearer " + config_.api_token);

    auto result = client.Post(endpoint_.path, headers, to_json(request).dump(), "application/json");
    if (!result) {
      throw TransportError("annotator request to " + config_.endpoint + " failed: " + httplib::to_string(result.error()));
    }
    if (result->status < 200 || result->status >= 300) {
      throw TransportError("annotator answered HTTP " + std::to_string(result->status) + ": " +
                           result->body.substr(0, 200));
    }
    return completion_text(result->body);
  }

 private:
  AnnotatorConfig config_;
  Endpoint endpoint_;
};

}  // namespace

std::unique_ptr<ChatClient> make_http_client(const AnnotatorConfig& config) {
  if (config.endpoint.empty()) throw ValidationError("no annotator endpoint configured");
  return std::make_unique<HttpChatClient>(config);
}

}  // namespace epitrace::annotate
