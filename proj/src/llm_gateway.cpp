#include "migratekit/llm_gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "migratekit/errors.hpp"

namespace migratekit {

namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const ChatMessage* last_user_message(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == "user") return &*it;
  }
  return nullptr;
}

TokenUsage estimated_usage(const ChatRequest& request, std::string_view response) {
  TokenUsage usage;
  for (const auto& m : request.messages) usage.prompt_tokens += estimate_tokens(m.content);
  usage.completion_tokens = estimate_tokens(response);
  usage.requests = 1;
  return usage;
}

}  // namespace

std::string assemble_prompt(const PromptBundle& bundle) {
  if (bundle.task_description.empty() || bundle.input_object.empty() || bundle.output_example.empty() ||
      bundle.output_requirement.empty()) {
    throw std::invalid_argument("prompt bundle has an empty part");
  }
  return fmt::format(
      "## Task description\n{}\n\n## Input object\n{}\n\n## Output example\n{}\n\n## Output requirement\n{}\n",
      bundle.task_description, bundle.input_object, bundle.output_example, bundle.output_requirement);
}

std::uint64_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

std::string flatten(const ChatRequest& request) {
  if (request.messages.size() == 1) return request.messages.front().content;
  std::string out;
  for (std::size_t i = 0; i < request.messages.size(); ++i) {
    if (i) out += "\n\n";
    out += "[" + request.messages[i].role + "]\n" + request.messages[i].content;
  }
  return out;
}

std::string request_digest(const ChatRequest& request) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : flatten(request)) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", hash);
}

void LlmConfig::validate() const {
  if (!(temperature >= 0.0 && temperature <= 2.0))
    throw ConfigError(fmt::format("temperature {} outside [0, 2]", temperature));
  if (max_attempts_per_request < 1) throw ConfigError("max attempts per request must be positive");
  if (request_timeout.count() <= 0) throw ConfigError("request timeout must be positive");
}

std::string LlmConfig::model_name() const {
  if (const auto* http = std::get_if<HttpBackendSpec>(&backend)) return http->model_name;
  if (std::holds_alternative<ScriptedBackendSpec>(backend)) return "scripted";
  return "replay";
}

// ---------------------------------------------------------------------------
// ScriptedBackend
// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries)
    : entries_(std::move(entries)), consumed_(entries_.size(), false) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("malformed script: ") + e.what());
  }
  const json* list = &doc;
  if (doc.is_object()) {
    auto it = doc.find("entries");
    if (it == doc.end()) throw SchemaError("entries", "missing field");
    list = &*it;
  }
  if (!list->is_array()) throw SchemaError("entries", "expected an array");
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const json& e = (*list)[i];
    const std::string path = fmt::format("entries[{}]", i);
    if (!e.is_object()) throw SchemaError(path, "expected an object");
    if (!e.contains("respond") || !e["respond"].is_string()) throw SchemaError(path + ".respond", "expected a string");
    std::string match;
    if (e.contains("match")) {
      if (!e["match"].is_string()) throw SchemaError(path + ".match", "expected a string");
      match = e["match"].get<std::string>();
    }
    entries.push_back({std::move(match), e["respond"].get<std::string>()});
  }
  return std::make_shared<ScriptedBackend>(std::move(entries));
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

Completion ScriptedBackend::complete(const ChatRequest& request) {
  const ChatMessage* user = last_user_message(request);
  const std::string_view text = user ? std::string_view(user->content) : std::string_view();
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (consumed_[i]) continue;
    if (entries_[i].match.empty() || text.find(entries_[i].match) != std::string_view::npos) {
      consumed_[i] = true;
      return {entries_[i].respond, estimated_usage(request, entries_[i].respond)};
    }
  }
  const std::string head(text.substr(0, 160));
  throw ScriptExhausted("no scripted response matches request: \"" + head + "\"");
}

std::size_t ScriptedBackend::remaining() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count(consumed_.begin(), consumed_.end(), false));
}

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

std::string Transcript::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    nlohmann::ordered_json line;
    line["digest"] = r.request_digest;
    line["prompt"] = r.prompt_text;
    line["response"] = r.response_text;
    line["prompt_tokens"] = r.token_usage.prompt_tokens;
    line["completion_tokens"] = r.token_usage.completion_tokens;
    out += line.dump() + "\n";
  }
  return out;
}

Transcript Transcript::from_jsonl(std::string_view text) {
  Transcript t;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string path = fmt::format("record {}", n);
    try {
      const json doc = json::parse(line);
      TranscriptRecord r;
      r.request_digest = doc.at("digest").get<std::string>();
      r.prompt_text = doc.at("prompt").get<std::string>();
      r.response_text = doc.at("response").get<std::string>();
      r.token_usage.prompt_tokens = doc.value("prompt_tokens", std::uint64_t{0});
      r.token_usage.completion_tokens = doc.value("completion_tokens", std::uint64_t{0});
      r.token_usage.requests = 1;
      t.append(std::move(r));
    } catch (const json::exception& e) {
      throw SchemaError(path, e.what());
    }
  }
  return t;
}

void Transcript::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_jsonl();
}

Transcript Transcript::load(const std::filesystem::path& path) { return from_jsonl(read_file(path)); }

// ---------------------------------------------------------------------------
// ReplayBackend / RecordingBackend
// ---------------------------------------------------------------------------

ReplayBackend::ReplayBackend(Transcript transcript) : transcript_(std::move(transcript)) {}

Completion ReplayBackend::complete(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  if (cursor_ >= transcript_.size()) {
    throw ReplayMismatch(fmt::format("transcript has {} records, request {} has no recording",
                                     transcript_.size(), cursor_ + 1));
  }
  const TranscriptRecord& record = transcript_.records()[cursor_++];
  if (record.request_digest != request_digest(request)) {
    ++mismatches_;
    spdlog::warn("replay: request {} digest differs from the recording", cursor_);
  }
  return {record.response_text, record.token_usage};
}

std::size_t ReplayBackend::cursor() const {
  std::lock_guard lock(mutex_);
  return cursor_;
}

std::size_t ReplayBackend::digest_mismatches() const {
  std::lock_guard lock(mutex_);
  return mismatches_;
}

RecordingBackend::RecordingBackend(std::shared_ptr<LlmBackend> inner, std::optional<std::filesystem::path> path)
    : inner_(std::move(inner)), path_(std::move(path)) {
  if (path_) Transcript{}.save(*path_);
}

Completion RecordingBackend::complete(const ChatRequest& request) {
  Completion c = inner_->complete(request);
  std::lock_guard lock(mutex_);
  transcript_.append({request_digest(request), flatten(request), c.text, c.usage});
  if (path_) transcript_.save(*path_);
  return c;
}

Transcript RecordingBackend::transcript() const {
  std::lock_guard lock(mutex_);
  return transcript_;
}

std::shared_ptr<LlmBackend> make_backend(const LlmConfig& config) {
  config.validate();
  if (const auto* http = std::get_if<HttpBackendSpec>(&config.backend)) {
    const char* key = std::getenv(http->api_key_env.c_str());
    return std::make_shared<HttpBackend>(http->endpoint, key ? key : "", config.request_timeout);
  }
  if (const auto* scripted = std::get_if<ScriptedBackendSpec>(&config.backend))
    return ScriptedBackend::from_file(scripted->script_path);
  return std::make_shared<ReplayBackend>(
      Transcript::load(std::get<ReplayBackendSpec>(config.backend).transcript_path));
}

// ---------------------------------------------------------------------------
// Gateway / session
// ---------------------------------------------------------------------------

LlmGateway::LlmGateway(LlmConfig config, std::shared_ptr<LlmBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
  config_.validate();
  if (!backend_) throw ConfigError("gateway needs a backend");
}

LlmGateway::LlmGateway(LlmConfig config) : LlmGateway(config, make_backend(config)) {}

Completion LlmGateway::complete(std::vector<ChatMessage> messages) const {
  ChatRequest request{std::move(messages), config_.model_name(), config_.temperature};
  for (int attempt = 1;; ++attempt) {
    try {
      return backend_->complete(request);
    } catch (const TransportError& e) {
      if (attempt >= config_.max_attempts_per_request) throw;
      spdlog::warn("llm transport error (attempt {}/{}): {}", attempt, config_.max_attempts_per_request, e.what());
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
    }
  }
}

Completion LlmGateway::complete(std::string_view prompt) const {
  return complete({ChatMessage{"user", std::string(prompt)}});
}

std::string LlmSession::ask(const std::string& prompt) {
  Completion c = gateway_->complete(prompt);
  usage_ += c.usage;
  return std::move(c.text);
}

std::string LlmSession::follow_up(const std::string& prompt, const std::string& prior_response,
                                  const std::string& feedback) {
  Completion c = gateway_->complete({{"user", prompt}, {"assistant", prior_response}, {"user", feedback}});
  usage_ += c.usage;
  return std::move(c.text);
}

}  // namespace migratekit
