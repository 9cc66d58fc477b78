#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace migratekit {

/// The four prompt parts, always assembled in this order.
struct PromptBundle {
  std::string task_description;
  std::string input_object;
  std::string output_example;
  std::string output_requirement;
};

/// Joins the four parts under fixed headings. Throws std::invalid_argument
/// when any part is empty.
std::string assemble_prompt(const PromptBundle& bundle);

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct TokenUsage {
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  std::uint64_t requests = 0;

  std::uint64_t total() const noexcept { return prompt_tokens + completion_tokens; }
  TokenUsage& operator+=(const TokenUsage& other) noexcept {
    prompt_tokens += other.prompt_tokens;
    completion_tokens += other.completion_tokens;
    requests += other.requests;
    return *this;
  }
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

/// Rough token count for backends that do not report usage: one token per
/// four characters, rounded up.
std::uint64_t estimate_tokens(std::string_view text);

struct ChatRequest {
  std::vector<ChatMessage> messages;
  std::string model;
  double temperature = 0.4;
};

struct Completion {
  std::string text;
  TokenUsage usage;
};

/// Text used for transcripts and digests. A single-message request flattens
/// to its content.
std::string flatten(const ChatRequest& request);
/// 16 hex digits of FNV-1a over `flatten(request)`.
std::string request_digest(const ChatRequest& request);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

inline constexpr const char* kApiKeyEnv = "MIGRATEKIT_API_KEY";

struct HttpBackendSpec {
  std::string endpoint = "https://api.openai.com/v1";
  std::string model_name = "gpt-3.5-turbo";
  std::string api_key_env = kApiKeyEnv;
};
struct ScriptedBackendSpec {
  std::filesystem::path script_path;
};
struct ReplayBackendSpec {
  std::filesystem::path transcript_path;
};

struct LlmConfig {
  std::variant<HttpBackendSpec, ScriptedBackendSpec, ReplayBackendSpec> backend = HttpBackendSpec{};
  double temperature = 0.4;
  int max_attempts_per_request = 3;
  std::chrono::milliseconds request_timeout{60'000};

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  std::string model_name() const;
};

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  /// Must be safe to call from several threads at once.
  virtual Completion complete(const ChatRequest& request) = 0;
};

/// Answers from an ordered list of (pattern, response) entries. The first
/// unconsumed entry whose pattern occurs in the last user message wins; an
/// empty pattern matches anything.
class ScriptedBackend : public LlmBackend {
 public:
  struct Entry {
    std::string match;
    std::string respond;
  };

  explicit ScriptedBackend(std::vector<Entry> entries);
  /// Reads `{"entries": [{"match": ..., "respond": ...}, ...]}` or a bare array.
  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);
  static std::shared_ptr<ScriptedBackend> from_json_text(std::string_view text);

  Completion complete(const ChatRequest& request) override;
  std::size_t remaining() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
  std::vector<bool> consumed_;
};

struct TranscriptRecord {
  std::string request_digest;
  std::string prompt_text;
  std::string response_text;
  TokenUsage token_usage;

  friend bool operator==(const TranscriptRecord&, const TranscriptRecord&) = default;
};

/// Ordered request/response log, stored as one JSON object per line.
class Transcript {
 public:
  void append(TranscriptRecord record) { records_.push_back(std::move(record)); }
  const std::vector<TranscriptRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  std::string to_jsonl() const;
  static Transcript from_jsonl(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Transcript load(const std::filesystem::path& path);

 private:
  std::vector<TranscriptRecord> records_;
};

/// Returns recorded responses in order. A digest mismatch is logged, not
/// fatal; running past the end throws ReplayMismatch.
class ReplayBackend : public LlmBackend {
 public:
  explicit ReplayBackend(Transcript transcript);
  Completion complete(const ChatRequest& request) override;
  std::size_t cursor() const;
  std::size_t digest_mismatches() const;

 private:
  mutable std::mutex mutex_;
  Transcript transcript_;
  std::size_t cursor_ = 0;
  std::size_t mismatches_ = 0;
};

/// Forwards to another backend and appends every exchange to a transcript,
/// rewriting `path` (when given) after each exchange.
class RecordingBackend : public LlmBackend {
 public:
  RecordingBackend(std::shared_ptr<LlmBackend> inner, std::optional<std::filesystem::path> path = {});
  Completion complete(const ChatRequest& request) override;
  Transcript transcript() const;

 private:
  std::shared_ptr<LlmBackend> inner_;
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mutex_;
  Transcript transcript_;
};

/// OpenAI-compatible chat completions over HTTP(S).
class HttpBackend : public LlmBackend {
 public:
  HttpBackend(std::string endpoint, std::string api_key, std::chrono::milliseconds timeout);
  Completion complete(const ChatRequest& request) override;

  /// Request body sent for `request`; exposed for wire-format tests.
  static std::string request_body(const ChatRequest& request);
  /// Parses a chat-completions response body; throws TransportError.
  static Completion parse_response(std::string_view body, const ChatRequest& request);

 private:
  std::string base_;  // scheme://host[:port]
  std::string path_;  // base path + "/chat/completions"
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

std::shared_ptr<LlmBackend> make_backend(const LlmConfig& config);

// ---------------------------------------------------------------------------
// Gateway and per-task sessions
// ---------------------------------------------------------------------------

/// Shareable entry point: stamps model and temperature on each request and
/// retries TransportError up to `max_attempts_per_request` times.
class LlmGateway {
 public:
  LlmGateway(LlmConfig config, std::shared_ptr<LlmBackend> backend);
  explicit LlmGateway(LlmConfig config);

  Completion complete(std::vector<ChatMessage> messages) const;
  Completion complete(std::string_view prompt) const;
  const LlmConfig& config() const noexcept { return config_; }

 private:
  LlmConfig config_;
  std::shared_ptr<LlmBackend> backend_;
};

/// Per-task view of a gateway that owns the task's token accounting.
class LlmSession {
 public:
  explicit LlmSession(const LlmGateway& gateway) : gateway_(&gateway) {}

  /// Standalone single-message request.
  std::string ask(const std::string& prompt);
  /// Feedback turn: the original prompt, the prior response and the feedback.
  std::string follow_up(const std::string& prompt, const std::string& prior_response,
                        const std::string& feedback);

  const TokenUsage& usage() const noexcept { return usage_; }

 private:
  const LlmGateway* gateway_;
  TokenUsage usage_;
};

}  // namespace migratekit
