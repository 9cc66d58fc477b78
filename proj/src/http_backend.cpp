#include <regex>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "migratekit/errors.hpp"
#include "migratekit/llm_gateway.hpp"

namespace migratekit {

HttpBackend::HttpBackend(std::string endpoint, std::string api_key, std::chrono::milliseconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(endpoint, m, url)) throw ConfigError("endpoint must be an http(s) URL: " + endpoint);
  base_ = m[1].str();
  std::string base_path = m[2].matched ? m[2].str() : "";
  while (!base_path.empty() && base_path.back() == '/') base_path.pop_back();
  path_ = base_path + "/chat/completions";
}

std::string HttpBackend::request_body(const ChatRequest& request) {
  nlohmann::ordered_json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  body["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : request.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  return body.dump();
}

Completion HttpBackend::parse_response(std::string_view body, const ChatRequest& request) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw TransportError(std::string("malformed chat completion body: ") + e.what());
  }
  Completion out;
  try {
    out.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw TransportError("chat completion body has no choices[0].message.content");
  }
  out.usage.requests = 1;
  if (auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
    out.usage.prompt_tokens = usage->value("prompt_tokens", std::uint64_t{0});
    out.usage.completion_tokens = usage->value("completion_tokens", std::uint64_t{0});
  } else {
    for (const auto& m : request.messages) out.usage.prompt_tokens += estimate_tokens(m.content);
    out.usage.completion_tokens = estimate_tokens(out.text);
  }
  return out;
}

Completion HttpBackend::complete(const ChatRequest& request) {
  httplib::Client client(base_);
  const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - seconds);
  client.set_connection_timeout(seconds.count(), micros.count());
  client.set_read_timeout(seconds.count(), micros.count());
  client.set_write_timeout(seconds.count(), micros.count());

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto res = client.Post(path_, headers, request_body(request), "application/json");
  if (!res) throw TransportError(fmt::format("POST {}{} failed: {}", base_, path_, httplib::to_string(res.error())));
  if (res->status < 200 || res->status >= 300)
    throw TransportError(fmt::format("POST {}{} returned HTTP {}", base_, path_, res->status));
  return parse_response(res->body, request);
}

}  // namespace migratekit
