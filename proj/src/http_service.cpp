#include "pdjournal/http_service.hpp"

#include <spdlog/spdlog.h>

#include "httplib.h"
#include "pdjournal/errors.hpp"

namespace pdj::service {

int http_status(Errc code) {
  switch (code) {
    case Errc::UnknownPatient:
    case Errc::UnknownSession: return 404;
    case Errc::SessionClosed: return 410;
    case Errc::ConcurrentTurn: return 409;
    case Errc::InvalidArgument: return 400;
    case Errc::ProviderUnavailable:
    case Errc::ProviderError:
    case Errc::Timeout: return 502;
    default: return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  auto body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw Error(Errc::InvalidArgument, "request body must be a JSON object");
  return body;
}

// Runs a handler, translating library errors into HTTP statuses.
template <typename F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      if (http_status(e.code()) >= 500) spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_error(res, http_status(e.code()), errc_name(e.code()), e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "InvalidArgument", e.what());
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_error(res, 500, "InternalError", e.what());
    }
  };
}

std::string sse_frame(const Event& e) {
  return "id: " + std::to_string(e.id) + "\nevent: " + e.type + "\ndata: " + e.data.dump() + "\n\n";
}

}  // namespace

HttpService::HttpService(std::shared_ptr<SessionManager> sessions, ServiceConfig config)
    : sessions_(std::move(sessions)), config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  routes();
}

HttpService::~HttpService() { stop(); }

void HttpService::routes() {
  auto& srv = *server_;
  auto sessions = sessions_;

  if (!config_.bearer_token.empty()) {
    srv.set_pre_routing_handler([token = "Bearer " + config_.bearer_token](const httplib::Request& req,
                                                                            httplib::Response& res) {
      if (req.path == "/healthz" || req.get_header_value("Authorization") == token) {
        return httplib::Server::HandlerResponse::Unhandled;
      }
      send_error(res, 401, "Unauthorized", "missing or wrong bearer token");
      return httplib::Server::HandlerResponse::Handled;
    });
  }

  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });

  srv.Post("/v1/patients", guarded([sessions](const httplib::Request& req, httplib::Response& res) {
             auto body = parse_body(req);
             if (!body.contains("patient_id")) throw Error(Errc::InvalidArgument, "patient_id is required");
             if (sessions->store().has_patient(body["patient_id"].get<std::string>())) {
               send_error(res, 409, "PatientExists", "patient already exists; use PUT .../profile");
               return;
             }
             send_json(res, 201, to_json(sessions->put_profile(profile_from_json(body))));
           }));

  srv.Put(R"(/v1/patients/([^/]+)/profile)",
          guarded([sessions](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            body["patient_id"] = req.matches[1].str();
            send_json(res, 200, to_json(sessions->put_profile(profile_from_json(body))));
          }));

  srv.Get(R"(/v1/patients/([^/]+)/profile)", guarded([sessions](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, to_json(sessions->profile(req.matches[1].str())));
          }));

  srv.Get(R"(/v1/patients/([^/]+)/journal)", guarded([sessions](const httplib::Request& req, httplib::Response& res) {
            std::int64_t since = 0;
            if (req.has_param("since")) {
              try {
                since = std::stoll(req.get_param_value("since"));
              } catch (const std::exception&) {
                throw Error(Errc::InvalidArgument, "since must be a millisecond timestamp");
              }
            }
            json out = json::array();
            for (const auto& e : sessions->journal(req.matches[1].str(), since)) out.push_back(to_json(e));
            send_json(res, 200, out);
          }));

  srv.Post("/v1/sessions", guarded([sessions](const httplib::Request& req, httplib::Response& res) {
             auto body = parse_body(req);
             auto start = sessions->start_session(body.at("patient_id").get<std::string>());
             send_json(res, 201, {{"session_id", start.session_id}, {"greeting", start.greeting}});
           }));

  srv.Post(R"(/v1/sessions/([^/]+)/messages)",
           guarded([sessions](const httplib::Request& req, httplib::Response& res) {
             auto body = parse_body(req);
             if (!body.contains("text") || !body["text"].is_string()) throw Error(Errc::InvalidArgument, "text is required");
             send_json(res, 200, to_json(sessions->post_message(req.matches[1].str(), body["text"].get<std::string>())));
           }));

  srv.Get(R"(/v1/sessions/([^/]+)/events)",
          guarded([this, sessions](const httplib::Request& req, httplib::Response& res) {
            auto log = sessions->events(req.matches[1].str());
            std::uint64_t after = 0;
            auto resume = req.get_header_value("Last-Event-ID");
            if (resume.empty() && req.has_param("last_event_id")) resume = req.get_param_value("last_event_id");
            if (!resume.empty()) {
              try {
                after = std::stoull(resume);
              } catch (const std::exception&) {
                throw Error(Errc::InvalidArgument, "Last-Event-ID must be numeric");
              }
            }
            auto cursor = std::make_shared<std::uint64_t>(after);
            auto heartbeat = std::chrono::milliseconds(config_.heartbeat_ms);
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream", [this, log, cursor, heartbeat](std::size_t, httplib::DataSink& sink) {
                  if (stopping_) {
                    sink.done();
                    return true;
                  }
                  auto events = log->wait_after(*cursor, heartbeat);
                  std::string chunk;
                  for (const auto& e : events) {
                    chunk += sse_frame(e);
                    *cursor = e.id;
                  }
                  if (chunk.empty()) chunk = ": heartbeat\n\n";
                  if (!sink.write(chunk.data(), chunk.size())) return false;
                  if ((log->closed() && *cursor >= log->last_id()) || stopping_) sink.done();
                  return true;
                });
          }));
}

int HttpService::bind() {
  if (config_.port == 0) {
    int port = server_->bind_to_any_port(config_.host);
    if (port < 0) throw Error(Errc::ConfigError, "cannot bind " + config_.host);
    return port;
  }
  if (!server_->bind_to_port(config_.host, config_.port)) {
    throw Error(Errc::ConfigError, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  return config_.port;
}

void HttpService::serve() { server_->listen_after_bind(); }

void HttpService::stop() {
  if (stopping_.exchange(true)) return;
  sessions_->shutdown();
  server_->stop();
}

}  // namespace pdj::service
