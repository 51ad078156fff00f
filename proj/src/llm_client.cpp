#include "dense/annotate.hpp"

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "dense/error.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace dense {

HttpChatTransport::HttpChatTransport(LlmEndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (!cfg_.api_key_env_var.empty()) {
    const char* key = std::getenv(cfg_.api_key_env_var.c_str());
    if (key == nullptr || *key == '\0') {
      throw ConfigError("environment variable " + cfg_.api_key_env_var + " holds no API key");
    }
    api_key_ = key;
  }
  // Split "scheme://host:port/prefix" into the client address and the path prefix.
  const auto scheme_end = cfg_.base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url lacks a scheme: " + cfg_.base_url);
  const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = cfg_.base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string HttpChatTransport::complete(const std::string& system_message, const std::string& user_message) {
  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration<double>(cfg_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  if (!api_key_.empty()) client.set_bearer_token_auth(api_key_);

  nlohmann::json body;
  body["model"] = cfg_.model;
  body["temperature"] = 0;
  body["messages"] = nlohmann::json::array({
      {{"role", "system"}, {"content", system_message}},
      {{"role", "user"}, {"content", user_message}},
  });
  auto res = client.Post(path_prefix_ + "/chat/completions", body.dump(), "application/json");
  if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("HTTP " + std::to_string(res->status));
  }
  auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("choices") || !reply["choices"].is_array() ||
      reply["choices"].empty()) {
    throw TransportError("malformed chat-completion reply");
  }
  const auto& message = reply["choices"][0].value("message", nlohmann::json::object());
  if (!message.contains("content") || !message["content"].is_string()) {
    throw TransportError("chat-completion reply carries no message content");
  }
  return message["content"].get<std::string>();
}

}  // namespace dense
