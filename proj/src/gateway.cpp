#include "agroforge/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <thread>

#include "agroforge/error.hpp"
#include "agroforge/text.hpp"

namespace agroforge {

namespace fs = std::filesystem;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem:
      return "system";
    case Role::kUser:
      return "user";
    case Role::kAssistant:
      return "assistant";
  }
  return "user";
}

bool ChatRequest::has_image() const {
  return std::any_of(messages.begin(), messages.end(),
                     [](const ChatMessage& m) { return m.image.has_value(); });
}

void ChatRequest::validate() const {
  if (messages.empty()) fail("InvalidRequest", "request has no messages");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (messages[i].role == Role::kSystem && i != 0) {
      fail("InvalidRequest", "system message allowed only in first position");
    }
    if (messages[i].image && messages[i].role != Role::kUser) {
      fail("InvalidRequest", "image references are only allowed in user messages");
    }
  }
  if (!(temperature >= 0.0)) fail("InvalidRequest", "temperature must be >= 0");
  if (max_tokens < 1) fail("InvalidRequest", "max_tokens must be positive");
}

std::string image_digest(const std::string& image_path) {
  std::ifstream in(image_path, std::ios::binary);
  if (!in) return "path:" + image_path;
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text::sha256_hex(bytes);
}

std::string cache_key(const ChatRequest& request) {
  ordered_json j;
  j["backend_id"] = request.backend_id;
  j["model_name"] = request.model_name;
  ordered_json messages = ordered_json::array();
  for (const auto& m : request.messages) {
    ordered_json mj;
    mj["role"] = std::string(to_string(m.role));
    mj["text"] = m.text;
    if (m.image) mj["image_digest"] = image_digest(*m.image);
    messages.push_back(std::move(mj));
  }
  j["messages"] = std::move(messages);
  j["temperature"] = request.temperature;
  j["max_tokens"] = request.max_tokens;
  if (request.sampling_seed) j["sampling_seed"] = *request.sampling_seed;
  return text::sha256_hex(j.dump());
}

std::chrono::milliseconds RetryPolicy::delay_before(int retry) const {
  if (retry < 1 || base_delay.count() <= 0) return std::chrono::milliseconds(0);
  int shift = std::min(retry - 1, 30);
  auto delay = base_delay * (std::int64_t{1} << shift);
  return std::min<std::chrono::milliseconds>(delay, max_delay);
}

BackendConfig BackendConfig::from_json(const json& j, const fs::path& base_dir) {
  try {
    BackendConfig c;
    c.backend_id = j.value("backend_id", c.backend_id);
    c.kind = j.value("kind", c.kind);
    c.base_url = j.value("base_url", c.base_url);
    c.model_name = j.value("model_name", c.model_name);
    c.vision_capable = j.value("vision_capable", c.vision_capable);
    c.auth_env_var = j.value("auth_env_var", c.auth_env_var);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
    c.latency_ms = j.value("latency_ms", c.latency_ms);
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
      c.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", static_cast<int>(c.retry.base_delay.count())));
      c.retry.max_delay = std::chrono::milliseconds(r.value("max_delay_ms", static_cast<int>(c.retry.max_delay.count())));
    }
    if (j.contains("transcript")) {
      fs::path t = j.at("transcript").get<std::string>();
      c.transcript = t.is_absolute() || base_dir.empty() ? t : base_dir / t;
    }
    if (c.kind != "openai" && c.kind != "mock") fail("InvalidConfig", "unknown backend kind '" + c.kind + "'");
    if (c.kind == "openai" && c.base_url.empty()) fail("InvalidConfig", "openai backend needs base_url");
    if (c.kind == "mock" && c.transcript.empty()) fail("InvalidConfig", "mock backend needs transcript");
    if (c.max_in_flight < 1) fail("InvalidConfig", "max_in_flight must be >= 1");
    if (c.retry.max_attempts < 1) fail("InvalidConfig", "retry.max_attempts must be >= 1");
    return c;
  } catch (const json::exception& e) {
    fail("InvalidConfig", e.what());
  }
}

BackendConfig BackendConfig::from_file(const fs::path& path) {
  return from_json(io::read_json(path), path.parent_path());
}

std::vector<MockEntry> mock_entries_from_json(const json& j) {
  if (!j.is_array()) fail("InvalidTranscript", "mock transcript must be a JSON array");
  std::vector<MockEntry> entries;
  try {
    for (const auto& ej : j) {
      MockEntry e;
      if (ej.contains("request_digest")) e.request_digest = ej.at("request_digest").get<std::string>();
      if (ej.contains("prompt_substring")) e.prompt_substring = ej.at("prompt_substring").get<std::string>();
      if (!e.request_digest && !e.prompt_substring) {
        fail("InvalidTranscript", "entry needs request_digest or prompt_substring");
      }
      if (ej.contains("response_sequence")) {
        e.responses = ej.at("response_sequence").get<std::vector<std::string>>();
      } else {
        e.responses.push_back(ej.at("response_text").get<std::string>());
      }
      if (e.responses.empty()) fail("InvalidTranscript", "entry has no responses");
      if (ej.contains("status_sequence")) e.statuses = ej.at("status_sequence").get<std::vector<int>>();
      entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    fail("InvalidTranscript", ex.what());
  }
  return entries;
}

MockBackend::MockBackend(std::vector<MockEntry> entries, std::chrono::milliseconds latency)
    : entries_(std::move(entries)), entry_calls_(entries_.size(), 0), latency_(latency) {}

std::shared_ptr<MockBackend> MockBackend::from_file(const fs::path& transcript,
                                                    std::chrono::milliseconds latency) {
  return std::make_shared<MockBackend>(mock_entries_from_json(io::read_json(transcript)), latency);
}

BackendReply MockBackend::send(const ChatRequest& request, const std::string& key) {
  ++calls_;
  int now = ++in_flight_;
  int seen = max_concurrency_.load();
  while (now > seen && !max_concurrency_.compare_exchange_weak(seen, now)) {
  }
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

  std::string_view last_user;
  for (const auto& m : request.messages) {
    if (m.role == Role::kUser) last_user = m.text;
  }

  BackendReply reply;
  {
    std::lock_guard<std::mutex> lock(mu_);
    std::optional<std::size_t> hit;
    for (std::size_t i = 0; i < entries_.size() && !hit; ++i) {
      if (entries_[i].request_digest && *entries_[i].request_digest == key) hit = i;
    }
    for (std::size_t i = 0; i < entries_.size() && !hit; ++i) {
      if (entries_[i].prompt_substring && text::contains(last_user, *entries_[i].prompt_substring)) hit = i;
    }
    if (!hit) {
      reply.status = 400;
      reply.error = "mock transcript has no entry for this request";
    } else {
      const MockEntry& e = entries_[*hit];
      std::size_t n = entry_calls_[*hit]++;
      reply.status = n < e.statuses.size() ? e.statuses[n] : 200;
      if (reply.status == 200) {
        reply.response.text = e.responses[std::min(n, e.responses.size() - 1)];
        reply.response.finish_reason = "stop";
        reply.response.usage.prompt_tokens = static_cast<int>(last_user.size() / 4);
        reply.response.usage.completion_tokens = static_cast<int>(reply.response.text.size() / 4);
      } else {
        reply.error = "scripted status " + std::to_string(reply.status);
      }
    }
  }
  --in_flight_;
  return reply;
}

ResponseCache::ResponseCache(std::optional<fs::path> dir) : dir_(std::move(dir)) {
  if (!dir_) return;
  fs::create_directories(*dir_);
  for (const auto& entry : fs::directory_iterator(*dir_)) {
    if (entry.path().extension() != ".json") continue;
    try {
      json j = io::read_json(entry.path());
      ChatResponse r;
      r.text = j.at("response").at("text").get<std::string>();
      r.finish_reason = j.at("response").value("finish_reason", std::string("stop"));
      r.usage.prompt_tokens = j.at("response").value("prompt_tokens", 0);
      r.usage.completion_tokens = j.at("response").value("completion_tokens", 0);
      entries_[j.at("request_digest").get<std::string>()] = std::move(r);
    } catch (const std::exception&) {
      // A torn or foreign file is ignored; the request will be re-issued.
    }
  }
}

std::optional<ChatResponse> ResponseCache::get(const std::string& key) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const std::string& key, const ChatResponse& response) {
  ChatResponse stored = response;
  stored.cache_hit = false;
  stored.retries = 0;
  std::lock_guard<std::mutex> lock(mu_);
  if (dir_) {
    ordered_json j;
    j["request_digest"] = key;
    j["response"] = {{"text", stored.text},
                     {"finish_reason", stored.finish_reason},
                     {"prompt_tokens", stored.usage.prompt_tokens},
                     {"completion_tokens", stored.usage.completion_tokens}};
    j["timestamp"] = static_cast<std::int64_t>(std::time(nullptr));
    io::write_text(*dir_ / (key + ".json"), j.dump() + "\n");
  }
  entries_[key] = std::move(stored);
}

std::size_t ResponseCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_.size();
}

Gateway::Gateway(BackendConfig config, std::shared_ptr<ChatBackend> backend,
                 std::shared_ptr<ResponseCache> cache)
    : config_(std::move(config)), backend_(std::move(backend)), cache_(std::move(cache)) {}

std::unique_ptr<Gateway> Gateway::create(const BackendConfig& config,
                                         std::shared_ptr<ResponseCache> cache) {
  std::shared_ptr<ChatBackend> backend;
  if (config.kind == "mock") {
    backend = MockBackend::from_file(config.transcript, std::chrono::milliseconds(config.latency_ms));
  } else {
    backend = std::make_shared<OpenAiBackend>(config);
  }
  return std::make_unique<Gateway>(config, std::move(backend), std::move(cache));
}

ChatRequest Gateway::resolve(const ChatRequest& request) const {
  ChatRequest r = request;
  if (r.backend_id.empty()) r.backend_id = config_.backend_id;
  if (r.backend_id != config_.backend_id) {
    fail("InvalidRequest", "request targets backend '" + r.backend_id + "' but gateway serves '" +
                               config_.backend_id + "'");
  }
  if (r.model_name.empty()) r.model_name = config_.model_name;
  return r;
}

BackendReply Gateway::send_bounded(const ChatRequest& request, const std::string& key) {
  {
    std::unique_lock<std::mutex> lock(slot_mu_);
    slot_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
  }
  BackendReply reply;
  try {
    reply = backend_->send(request, key);
  } catch (...) {
    std::lock_guard<std::mutex> lock(slot_mu_);
    --in_flight_;
    slot_cv_.notify_one();
    throw;
  }
  {
    std::lock_guard<std::mutex> lock(slot_mu_);
    --in_flight_;
  }
  slot_cv_.notify_one();
  return reply;
}

namespace {
bool is_transient(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }
}  // namespace

ChatResponse Gateway::chat(const ChatRequest& request) {
  request.validate();
  ChatRequest r = resolve(request);
  if (r.has_image() && !config_.vision_capable) {
    fail("ImageUnsupported", "backend '" + config_.backend_id + "' is not vision-capable");
  }
  const std::string key = cache_key(r);
  if (cache_) {
    if (auto hit = cache_->get(key)) {
      ++cache_hits_;
      hit->cache_hit = true;
      return *hit;
    }
  }
  std::string last_error;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      ++retries_;
      auto delay = config_.retry.delay_before(attempt - 1);
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
    }
    ++network_calls_;
    BackendReply reply = send_bounded(r, key);
    if (reply.status == 200) {
      reply.response.cache_hit = false;
      reply.response.retries = attempt - 1;
      if (cache_) cache_->put(key, reply.response);
      return reply.response;
    }
    last_error = "status " + std::to_string(reply.status) + (reply.error.empty() ? "" : ": " + reply.error);
    if (!is_transient(reply.status)) fail("InvalidRequest", last_error);
  }
  fail("BackendUnavailable", "gave up after " + std::to_string(config_.retry.max_attempts) +
                                 " attempt(s); last " + last_error);
}

std::vector<ChatOutcome> Gateway::chat_batch(std::span<const ChatRequest> requests, int max_in_flight) {
  if (max_in_flight < 1) fail("InvalidRequest", "max_in_flight must be >= 1");
  std::vector<ChatOutcome> out(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        out[i].response = chat(requests[i]);
      } catch (const Error& e) {
        out[i].error_code = e.code();
        out[i].error_message = e.message();
      } catch (const std::exception& e) {
        out[i].error_code = "InternalError";
        out[i].error_message = e.what();
      }
    }
  };
  std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), requests.size());
  std::vector<std::jthread> threads;
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(worker);
  if (workers > 0) worker();
  return out;
}

GatewayStats Gateway::stats() const {
  return GatewayStats{network_calls_.load(), cache_hits_.load(), retries_.load()};
}

}  // namespace agroforge
