#include <cstdlib>
#include <regex>

#include "httplib.h"
#include "json.hpp"
#include "pdjournal/errors.hpp"
#include "pdjournal/llmgw.hpp"

namespace pdj::llmgw {

using json = nlohmann::json;

HttpProvider::HttpProvider(Config config) : config_(std::move(config)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, kUrl)) {
    throw Error(Errc::ConfigError, "invalid completion endpoint '" + config_.endpoint + "'");
  }
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

HttpProvider::Config HttpProvider::config_from_env() {
  auto env = [](const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
  };
  Config c;
  c.endpoint = env("PDJ_LLM_ENDPOINT");
  c.api_key = env("PDJ_LLM_API_KEY");
  if (auto model = env("PDJ_LLM_MODEL"); !model.empty()) c.model = model;
  if (c.endpoint.empty()) throw Error(Errc::ConfigError, "PDJ_LLM_ENDPOINT is not set");
  return c;
}

std::string HttpProvider::build_body(const Config& config, const CompletionRequest& req) {
  json body = {
      {"model", config.model},
      {"messages", json::array({{{"role", "user"}, {"content", req.prompt}}})},
      {"temperature", req.temperature},
      {"max_tokens", req.max_tokens},
  };
  return body.dump();
}

std::string HttpProvider::parse_body(std::string_view body) {
  auto doc = json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw Error(Errc::ProviderError, "completion body is not JSON", 502);
  const auto& choices = doc.value("choices", json::array());
  if (choices.is_array() && !choices.empty()) {
    const auto& first = choices.front();
    if (first.contains("message") && first["message"].contains("content") && first["message"]["content"].is_string()) {
      return first["message"]["content"].get<std::string>();
    }
    if (first.contains("text") && first["text"].is_string()) return first["text"].get<std::string>();
  }
  throw Error(Errc::ProviderError, "completion body has no choices", 502);
}

std::string HttpProvider::do_complete(const CompletionRequest& req) {
  httplib::Client client(scheme_host_port_);
  auto deadline = std::chrono::milliseconds(req.deadline_ms > 0 ? req.deadline_ms : 30000);
  client.set_connection_timeout(deadline);
  client.set_read_timeout(deadline);
  client.set_write_timeout(deadline);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = client.Post(path_, headers, build_body(config_, req), "application/json");
  if (!res) {
    auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout || err == httplib::Error::Write) {
      throw Error(Errc::Timeout, "completion request timed out: " + httplib::to_string(err));
    }
    throw Error(Errc::ProviderError, "completion request failed: " + httplib::to_string(err), 0);
  }
  if (res->status != 200) {
    throw Error(Errc::ProviderError, "completion endpoint returned " + std::to_string(res->status), res->status);
  }
  return parse_body(res->body);
}

}  // namespace pdj::llmgw
