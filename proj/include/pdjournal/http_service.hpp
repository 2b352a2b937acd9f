#pragma once

#include <atomic>
#include <memory>
#include <string>

#include "pdjournal/errors.hpp"
#include "pdjournal/session.hpp"

namespace httplib {
class Server;
}

namespace pdj::service {

int http_status(Errc code);

/// JSON/SSE binding of a SessionManager.
///
///   POST /v1/patients                     create a patient from a profile body
///   PUT  /v1/patients/{id}/profile        replace the profile (new version)
///   GET  /v1/patients/{id}/profile
///   GET  /v1/patients/{id}/journal?since=<ms>
///   POST /v1/sessions                     {"patient_id"} -> {"session_id", "greeting"}
///   POST /v1/sessions/{id}/messages       {"text"} -> turn response
///   GET  /v1/sessions/{id}/events         server-sent events
///   GET  /healthz
class HttpService {
public:
  HttpService(std::shared_ptr<SessionManager> sessions, ServiceConfig config);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds to config.host:config.port (0 picks a free port) and returns the port.
  int bind();
  // Blocks until stop().
  void serve();
  void stop();

private:
  void routes();

  std::shared_ptr<SessionManager> sessions_;
  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::atomic<bool> stopping_{false};
};

}  // namespace pdj::service
