#include "epitrace/server.hpp"

#include <httplib.h>

#include <functional>

namespace epitrace::service {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void send_json(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message,
                ordered_json extra = ordered_json::object()) {
  ordered_json body = {{"code", code}, {"message", message}};
  for (auto& [k, v] : extra.items()) body[k] = v;
  send_json(res, status, body);
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

// Maps library exceptions onto HTTP statuses.
httplib::Server::Handler guarded(Handler fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const IncompleteError& e) {
      send_error(res, 422, "incomplete", e.what(), {{"gaps", e.gaps()}});
    } catch (const ConflictError& e) {
      send_error(res, 409, "conflict", e.what(), {{"latest_revision", e.actual()}});
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "invalid_json", e.what());
    } catch (const Error& e) {
      if (e.exit_code() == ExitCode::kValidation) {
        send_error(res, 400, "validation_error", e.what());
      } else {
        send_error(res, 500, "internal", e.what());
      }
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

void send_stored(httplib::Response& res, const std::optional<json>& doc, std::string_view what,
                 const std::string& id) {
  if (!doc) throw NotFoundError("no " + std::string(what) + " stored for trace '" + id + "'");
  send_json(res, 200, ordered_json::parse(doc->dump()));
}

}  // namespace

struct ApiServer::Impl {
  Store& store;
  ServerOptions options;
  httplib::Server http;
  bool bound = false;

  Impl(Store& s, ServerOptions o) : store(s), options(std::move(o)) { routes(); }

  void routes() {
    http.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (options.token.empty()) return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") == "Bearer " + options.token) {
        return httplib::Server::HandlerResponse::Unhandled;
      }
      send_error(res, 401, "unauthorized", "missing or invalid bearer token");
      return httplib::Server::HandlerResponse::Handled;
    });
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
      send_error(res, res.status, code, res.status == 404 ? "no such route" : "request failed");
    });

    http.Get("/traces", guarded([this](const httplib::Request& req, httplib::Response& res) {
      TraceFilter filter;
      for (const auto* name : {"model", "environment", "scope", "scaffold", "task_id"}) {
        if (req.has_param(name)) filter.equals[*trace::parse_group_field(name)] = req.get_param_value(name);
      }
      send_json(res, 200, {{"traces", store.list_metadata(filter)}});
    }));
    http.Get(R"(/traces/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.matches[1].str();
      const auto t = store.get_trace(id);
      if (!t) throw NotFoundError("unknown trace '" + id + "'");
      send_json(res, 200, trace::to_json(*t));
    }));
    http.Get(R"(/traces/([^/]+)/graph)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_stored(res, store.get_graph(req.matches[1].str()), "graph", req.matches[1].str());
    }));
    http.Get(R"(/traces/([^/]+)/ledger)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_stored(res, store.get_ledger(req.matches[1].str()), "ledger", req.matches[1].str());
    }));
    http.Get(R"(/traces/([^/]+)/motifs)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_stored(res, store.get_motifs(req.matches[1].str()), "motif results", req.matches[1].str());
    }));
    http.Get("/markers", guarded([](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, taxonomy_json());
    }));
    http.Get(R"(/annotations/([^/]+)/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<int> revision;
      if (req.has_param("revision")) {
        try {
          revision = std::stoi(req.get_param_value("revision"));
        } catch (const std::exception&) {
          throw ValidationError("revision must be an integer");
        }
      }
      const auto doc = store.annotation_document(req.matches[1].str(), req.matches[2].str(), revision);
      if (!doc) throw NotFoundError("no annotation stored for this trace and annotator");
      res.status = 200;
      res.set_content(*doc, "application/json");
    }));
    http.Put(R"(/annotations/([^/]+)/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto trace_id = req.matches[1].str();
      const auto annotator = req.matches[2].str();
      const auto body = json::parse(req.body);
      auto annotation = annotation_from_json(body);
      if (!annotation.trace_id.empty() && annotation.trace_id != trace_id) {
        throw ValidationError("body trace_id does not match the URL");
      }
      if (!annotation.annotator_id.empty() && annotation.annotator_id != annotator) {
        throw ValidationError("body annotator_id does not match the URL");
      }
      annotation.trace_id = trace_id;
      annotation.annotator_id = annotator;
      std::optional<int> expected;
      if (body.contains("expected_revision") && !body["expected_revision"].is_null()) {
        if (!body["expected_revision"].is_number_integer()) throw ValidationError("expected_revision must be an integer");
        expected = body["expected_revision"].get<int>();
      } else if (req.has_header("If-Match")) {
        try {
          expected = std::stoi(req.get_header_value("If-Match"));
        } catch (const std::exception&) {
          throw ValidationError("If-Match must carry a revision number");
        }
      }
      const bool submitted = annotation.submitted;
      const int revision = store.store_annotation(std::move(annotation), expected);
      send_json(res, 200,
                {{"trace_id", trace_id}, {"annotator_id", annotator}, {"revision", revision}, {"submitted", submitted}});
    }));
    http.Post(R"(/annotations/([^/]+)/([^/]+)/submit)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto trace_id = req.matches[1].str();
                const auto annotator = req.matches[2].str();
                const int revision = store.submit_annotation(trace_id, annotator);
                send_json(res, 200, {{"trace_id", trace_id},
                                     {"annotator_id", annotator},
                                     {"revision", revision},
                                     {"submitted", true}});
              }));
  }
};

ApiServer::ApiServer(Store& store, ServerOptions options) : impl_(std::make_unique<Impl>(store, std::move(options))) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  int bound = -1;
  if (port == 0) {
    bound = impl_->http.bind_to_any_port(host);
  } else if (impl_->http.bind_to_port(host, port)) {
    bound = port;
  }
  impl_->bound = bound > 0;
  return bound;
}

bool ApiServer::run() {
  if (!impl_->bound) return false;
  return impl_->http.listen_after_bind();
}

void ApiServer::stop() {
  if (impl_) impl_->http.stop();
}

bool ApiServer::running() const { return impl_->http.is_running(); }

}  // namespace epitrace::service
