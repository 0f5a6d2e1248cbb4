#include <cstdlib>
#include <fstream>

#include "agroforge/error.hpp"
#include "agroforge/gateway.hpp"
#include "agroforge/text.hpp"
#include "httplib.h"

namespace agroforge {

namespace {

std::string mime_for(const std::string& path) {
  std::string ext = text::to_lower(std::filesystem::path(path).extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  return "image/jpeg";
}

std::string data_url(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("InvalidRequest", "cannot read image " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return "data:" + mime_for(path) + ";base64," + text::base64_encode(bytes);
}

// "http://host:8000/v1" -> {"http://host:8000", "/v1"}
std::pair<std::string, std::string> split_base_url(const std::string& url) {
  std::size_t scheme = url.find("://");
  std::size_t slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

}  // namespace

ordered_json to_wire_json(const ChatRequest& request, std::string_view model_name) {
  ordered_json body;
  body["model"] = std::string(model_name);
  ordered_json messages = ordered_json::array();
  for (const auto& m : request.messages) {
    ordered_json mj;
    mj["role"] = std::string(to_string(m.role));
    if (m.image) {
      ordered_json parts = ordered_json::array();
      parts.push_back({{"type", "text"}, {"text", m.text}});
      parts.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(*m.image)}}}});
      mj["content"] = std::move(parts);
    } else {
      mj["content"] = m.text;
    }
    messages.push_back(std::move(mj));
  }
  body["messages"] = std::move(messages);
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  if (request.sampling_seed) body["seed"] = *request.sampling_seed;
  body["stream"] = false;
  return body;
}

ChatResponse parse_wire_response(const json& body) {
  try {
    ChatResponse r;
    const auto& choice = body.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    if (content.is_string()) {
      r.text = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content) {
        if (part.value("type", "") == "text") r.text += part.value("text", "");
      }
    }
    r.finish_reason = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                          ? choice["finish_reason"].get<std::string>()
                          : "stop";
    if (body.contains("usage") && body["usage"].is_object()) {
      r.usage.prompt_tokens = body["usage"].value("prompt_tokens", 0);
      r.usage.completion_tokens = body["usage"].value("completion_tokens", 0);
    }
    return r;
  } catch (const json::exception& e) {
    fail("InvalidResponse", std::string("malformed chat-completions body: ") + e.what());
  }
}

OpenAiBackend::OpenAiBackend(BackendConfig config) : config_(std::move(config)) {}

BackendReply OpenAiBackend::send(const ChatRequest& request, const std::string& /*key*/) {
  auto [host, prefix] = split_base_url(config_.base_url);
  httplib::Client client(host);
  auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  if (!config_.auth_env_var.empty()) {
    if (const char* token = std::getenv(config_.auth_env_var.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const std::string body = to_wire_json(request, request.model_name).dump();
  auto res = client.Post(prefix + "/chat/completions", headers, body, "application/json");

  BackendReply reply;
  if (!res) {
    reply.status = 0;
    reply.error = httplib::to_string(res.error());
    return reply;
  }
  reply.status = res->status;
  if (res->status != 200) {
    reply.error = res->body.substr(0, 512);
    return reply;
  }
  try {
    reply.response = parse_wire_response(json::parse(res->body));
  } catch (const json::parse_error& e) {
    reply.status = 502;
    reply.error = std::string("unparseable body: ") + e.what();
  } catch (const Error& e) {
    reply.status = 502;
    reply.error = e.what();
  }
  return reply;
}

}  // namespace agroforge
