#pragma once

#include <memory>
#include <string>

#include "epitrace/service.hpp"

namespace epitrace::service {

struct ServerOptions {
  // When non-empty, every request must carry "Authorization: Bearer <token>".
  std::string token;
};

// REST front end over a Store. Routes:
//   GET  /traces                       ?model=&environment=&scope=&scaffold=&task_id=
//   GET  /traces/{id}
//   GET  /traces/{id}/graph
//   GET  /traces/{id}/ledger
//   GET  /traces/{id}/motifs
//   GET  /markers
//   GET  /annotations/{trace_id}/{annotator}          ?revision=
//   PUT  /annotations/{trace_id}/{annotator}
//   POST /annotations/{trace_id}/{annotator}/submit
// Errors are {"code", "message"} documents.
class ApiServer {
 public:
  ApiServer(Store& store, ServerOptions options = {});
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds without serving; port 0 picks a free port. Returns the bound port
  // or -1 on failure.
  int bind(const std::string& host, int port);
  // Serves until stop(); requires a successful bind().
  bool run();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace epitrace::service
