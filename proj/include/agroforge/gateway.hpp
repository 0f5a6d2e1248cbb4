#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agroforge/json_io.hpp"

namespace agroforge {

enum class Role { kSystem, kUser, kAssistant };
std::string_view to_string(Role role);

struct ChatMessage {
  Role role = Role::kUser;
  std::string text;
  std::optional<std::string> image;  // file path; user messages only
};

struct ChatRequest {
  std::string backend_id;  // empty: the gateway's own backend
  std::string model_name;  // empty: the backend's configured model
  std::vector<ChatMessage> messages;
  double temperature = 0.2;
  int max_tokens = 1024;
  // Forwarded as the endpoint's sampling seed. Part of the cache key, so
  // retries that bump it produce distinct cached entries.
  std::optional<std::uint64_t> sampling_seed;

  bool has_image() const;
  // Throws Error("InvalidRequest") for a second or misplaced system message,
  // an image outside a user message, negative temperature, or max_tokens < 1.
  void validate() const;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  std::string finish_reason;
  TokenUsage usage;
  bool cache_hit = false;
  int retries = 0;
};

// Hex SHA-256 over a canonical encoding of the request. Images contribute the
// digest of their file contents, not their path.
std::string cache_key(const ChatRequest& request);
std::string image_digest(const std::string& image_path);

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{30'000};

  std::chrono::milliseconds delay_before(int retry) const;  // retry >= 1
};

// Backend config file:
// {backend_id, base_url, model_name, vision_capable, auth_env_var,
//  max_in_flight, retry: {max_attempts, base_delay_ms}}
// plus the artifact's own fields: kind ("openai" | "mock"), transcript,
// timeout_ms, latency_ms (mock only).
struct BackendConfig {
  std::string backend_id = "default";
  std::string kind = "openai";
  std::string base_url;
  std::string model_name;
  bool vision_capable = false;
  std::string auth_env_var;
  int max_in_flight = 4;
  RetryPolicy retry;
  int timeout_ms = 120'000;
  std::filesystem::path transcript;
  int latency_ms = 0;

  static BackendConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
  static BackendConfig from_file(const std::filesystem::path& path);
};

// One raw exchange with an endpoint. status 200 carries a response; 0 means a
// transport failure or timeout.
struct BackendReply {
  int status = 0;
  ChatResponse response;
  std::string error;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual BackendReply send(const ChatRequest& request, const std::string& key) = 0;
};

// OpenAI-compatible POST {base_url}/chat/completions.
class OpenAiBackend : public ChatBackend {
 public:
  explicit OpenAiBackend(BackendConfig config);
  BackendReply send(const ChatRequest& request, const std::string& key) override;

 private:
  BackendConfig config_;
};

ordered_json to_wire_json(const ChatRequest& request, std::string_view model_name);
ChatResponse parse_wire_response(const json& body);

// Scripted replies for offline runs. Transcript file: a JSON array of
//   {request_digest | prompt_substring, response_text | response_sequence,
//    status_sequence?}
// An entry matches when its digest equals the request's cache key, or when
// its substring occurs in the last user message (empty substring matches
// everything). Digest entries are checked first, then substring entries in
// file order. The n-th call routed to an entry returns status_sequence[n]
// (200 once the sequence is exhausted) and response_sequence[n] (last element
// repeated).
struct MockEntry {
  std::optional<std::string> request_digest;
  std::optional<std::string> prompt_substring;
  std::vector<std::string> responses;
  std::vector<int> statuses;
};

std::vector<MockEntry> mock_entries_from_json(const json& j);

class MockBackend : public ChatBackend {
 public:
  MockBackend(std::vector<MockEntry> entries, std::chrono::milliseconds latency = {});
  static std::shared_ptr<MockBackend> from_file(const std::filesystem::path& transcript,
                                                std::chrono::milliseconds latency = {});

  BackendReply send(const ChatRequest& request, const std::string& key) override;

  std::size_t calls() const { return calls_.load(); }
  int max_concurrency() const { return max_concurrency_.load(); }

 private:
  std::vector<MockEntry> entries_;
  std::vector<std::size_t> entry_calls_;
  std::chrono::milliseconds latency_;
  std::mutex mu_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_concurrency_{0};
};

// Thread-safe response cache; optionally mirrored to one JSON file per key
// under a directory so interrupted runs resume where they stopped.
class ResponseCache {
 public:
  explicit ResponseCache(std::optional<std::filesystem::path> dir = std::nullopt);

  std::optional<ChatResponse> get(const std::string& key);
  void put(const std::string& key, const ChatResponse& response);
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  std::map<std::string, ChatResponse> entries_;
};

// Outcome slot of a batch: either a response or the error that ended it.
struct ChatOutcome {
  std::optional<ChatResponse> response;
  std::string error_code;
  std::string error_message;

  bool ok() const { return response.has_value(); }
};

struct GatewayStats {
  std::size_t network_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t retries = 0;
};

class Gateway {
 public:
  Gateway(BackendConfig config, std::shared_ptr<ChatBackend> backend,
          std::shared_ptr<ResponseCache> cache = std::make_shared<ResponseCache>());

  // Builds the backend named by config.kind. A null cache disables caching.
  static std::unique_ptr<Gateway> create(const BackendConfig& config,
                                         std::shared_ptr<ResponseCache> cache);

  // Errors: BackendUnavailable (retries exhausted), InvalidRequest,
  // ImageUnsupported.
  ChatResponse chat(const ChatRequest& request);

  // Results align with `requests` by index; failures land in their slot.
  std::vector<ChatOutcome> chat_batch(std::span<const ChatRequest> requests, int max_in_flight);

  const BackendConfig& config() const { return config_; }
  GatewayStats stats() const;

 private:
  ChatRequest resolve(const ChatRequest& request) const;
  BackendReply send_bounded(const ChatRequest& request, const std::string& key);

  BackendConfig config_;
  std::shared_ptr<ChatBackend> backend_;
  std::shared_ptr<ResponseCache> cache_;

  std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;

  std::atomic<std::size_t> network_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> retries_{0};
};

}  // namespace agroforge
