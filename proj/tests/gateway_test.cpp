#include <gtest/gtest.h>

#include <stdlib.h>

#include <atomic>
#include <thread>

#include "agroforge/gateway.hpp"
#include "agroforge/text.hpp"
#include "httplib.h"
#include "support.hpp"

namespace agroforge {
namespace {

using testing::error_code_of;
using testing::fixture_dir;
using testing::TempDir;

BackendConfig mock_config(bool vision = true) {
  BackendConfig c;
  c.backend_id = "mock";
  c.kind = "mock";
  c.model_name = "m";
  c.vision_capable = vision;
  c.max_in_flight = 3;
  c.retry.max_attempts = 3;
  c.retry.base_delay = std::chrono::milliseconds(1);
  c.retry.max_delay = std::chrono::milliseconds(2);
  return c;
}

ChatRequest user_says(const std::string& text) {
  ChatRequest r;
  r.messages.push_back({Role::kUser, text, std::nullopt});
  return r;
}

MockEntry entry(const std::string& substring, std::vector<std::string> responses, std::vector<int> statuses = {}) {
  MockEntry e;
  e.prompt_substring = substring;
  e.responses = std::move(responses);
  e.statuses = std::move(statuses);
  return e;
}

TEST(RequestTest, Validation) {
  ChatRequest r = user_says("hi");
  EXPECT_NO_THROW(r.validate());
  r.messages.push_back({Role::kSystem, "late system", std::nullopt});
  EXPECT_EQ(error_code_of([&] { r.validate(); }), "InvalidRequest");
  ChatRequest img;
  img.messages.push_back({Role::kAssistant, "x", std::string("a.png")});
  EXPECT_EQ(error_code_of([&] { img.validate(); }), "InvalidRequest");
  ChatRequest bad = user_says("x");
  bad.max_tokens = 0;
  EXPECT_EQ(error_code_of([&] { bad.validate(); }), "InvalidRequest");
  bad.max_tokens = 1;
  bad.temperature = -0.1;
  EXPECT_EQ(error_code_of([&] { bad.validate(); }), "InvalidRequest");
}

TEST(CacheKeyTest, DependsOnContentNotImagePath) {
  TempDir dir;
  io::write_text(dir / "a.png", "same bytes");
  io::write_text(dir / "b.png", "same bytes");
  io::write_text(dir / "c.png", "other bytes");
  auto with_image = [](const std::filesystem::path& p) {
    ChatRequest r;
    r.messages.push_back({Role::kUser, "describe", p.string()});
    return r;
  };
  EXPECT_EQ(cache_key(with_image(dir / "a.png")), cache_key(with_image(dir / "b.png")));
  EXPECT_NE(cache_key(with_image(dir / "a.png")), cache_key(with_image(dir / "c.png")));
  EXPECT_EQ(image_digest((dir / "a.png").string()), text::sha256_hex("same bytes"));

  ChatRequest a = user_says("q"), b = user_says("q");
  b.sampling_seed = 2;
  EXPECT_NE(cache_key(a), cache_key(b));
  b.sampling_seed.reset();
  b.temperature = 0.7;
  EXPECT_NE(cache_key(a), cache_key(b));
  EXPECT_EQ(cache_key(a).size(), 64u);
}

TEST(RetryPolicyTest, ExponentialWithCap) {
  RetryPolicy p;
  p.base_delay = std::chrono::milliseconds(100);
  p.max_delay = std::chrono::milliseconds(1000);
  EXPECT_EQ(p.delay_before(1).count(), 100);
  EXPECT_EQ(p.delay_before(2).count(), 200);
  EXPECT_EQ(p.delay_before(4).count(), 800);
  EXPECT_EQ(p.delay_before(5).count(), 1000);
  EXPECT_EQ(p.delay_before(60).count(), 1000);
}

TEST(GatewayTest, RetriesTransientStatusThenSucceeds) {
  auto backend = std::make_shared<MockBackend>(std::vector<MockEntry>{entry("", {"ok"}, {429, 200})});
  Gateway gw(mock_config(), backend);
  auto r = gw.chat(user_says("anything"));
  EXPECT_EQ(r.text, "ok");
  EXPECT_EQ(r.retries, 1);
  EXPECT_FALSE(r.cache_hit);
  EXPECT_EQ(backend->calls(), 2u);
  EXPECT_EQ(gw.stats().retries, 1u);
}

TEST(GatewayTest, GivesUpAfterMaxAttempts) {
  auto backend = std::make_shared<MockBackend>(std::vector<MockEntry>{entry("", {"ok"}, {503, 503, 503, 503})});
  Gateway gw(mock_config(), backend);
  EXPECT_EQ(error_code_of([&] { gw.chat(user_says("x")); }), "BackendUnavailable");
  EXPECT_EQ(backend->calls(), 3u);
}

TEST(GatewayTest, PermanentStatusIsNotRetried) {
  auto backend = std::make_shared<MockBackend>(std::vector<MockEntry>{entry("known", {"ok"})});
  Gateway gw(mock_config(), backend);
  EXPECT_EQ(error_code_of([&] { gw.chat(user_says("unmatched prompt")); }), "InvalidRequest");
  EXPECT_EQ(backend->calls(), 1u);
}

TEST(GatewayTest, CacheHitMakesNoNetworkCall) {
  auto backend = std::make_shared<MockBackend>(std::vector<MockEntry>{entry("", {"first", "second"})});
  Gateway gw(mock_config(), backend);
  EXPECT_EQ(gw.chat(user_says("q")).text, "first");
  auto again = gw.chat(user_says("q"));
  EXPECT_EQ(again.text, "first");
  EXPECT_TRUE(again.cache_hit);
  EXPECT_EQ(backend->calls(), 1u);
  EXPECT_EQ(gw.stats().cache_hits, 1u);
  EXPECT_EQ(gw.stats().network_calls, 1u);
}

TEST(GatewayTest, NullCacheAlwaysCallsBackend) {
  auto backend = std::make_shared<MockBackend>(std::vector<MockEntry>{entry("", {"a", "b"})});
  Gateway gw(mock_config(), backend, nullptr);
  EXPECT_EQ(gw.chat(user_says("q")).text, "a");
  EXPECT_EQ(gw.chat(user_says("q")).text, "b");
}

TEST(GatewayTest, CachePersistsAcrossInstances) {
  TempDir dir;
  {
    auto backend = std::make_shared<MockBackend>(std::vector<MockEntry>{entry("", {"stored"})});
    Gateway gw(mock_config(), backend, std::make_shared<ResponseCache>(dir / "cache"));
    gw.chat(user_says("q"));
  }
  io::write_text(dir / "cache/garbage.json", "{not json");
  auto backend = std::make_shared<MockBackend>(std::vector<MockEntry>{entry("", {"fresh"})});
  Gateway gw(mock_config(), backend, std::make_shared<ResponseCache>(dir / "cache"));
  auto r = gw.chat(user_says("q"));
  EXPECT_EQ(r.text, "stored");
  EXPECT_TRUE(r.cache_hit);
  EXPECT_EQ(backend->calls(), 0u);
}

TEST(GatewayTest, ImageOnTextOnlyBackendIsRejected) {
  auto backend = std::make_shared<MockBackend>(std::vector<MockEntry>{entry("", {"x"})});
  Gateway gw(mock_config(false), backend);
  ChatRequest r;
  r.messages.push_back({Role::kUser, "describe", (fixture_dir() / "datasets/cotton").string()});
  EXPECT_EQ(error_code_of([&] { gw.chat(r); }), "ImageUnsupported");
  EXPECT_EQ(backend->calls(), 0u);
}

TEST(GatewayTest, BatchRespectsConcurrencyAndIsolatesFailures) {
  auto backend = std::make_shared<MockBackend>(
      std::vector<MockEntry>{entry("poison", {"never"}, {500, 500, 500, 500}), entry("", {"fine"})},
      std::chrono::milliseconds(5));
  Gateway gw(mock_config(), backend, nullptr);
  std::vector<ChatRequest> reqs;
  for (int i = 0; i < 12; ++i) reqs.push_back(user_says(i == 7 ? "poison" : "item " + std::to_string(i)));
  auto out = gw.chat_batch(reqs, 8);
  ASSERT_EQ(out.size(), 12u);
  for (int i = 0; i < 12; ++i) {
    if (i == 7) {
      EXPECT_FALSE(out[i].ok());
      EXPECT_EQ(out[i].error_code, "BackendUnavailable");
    } else {
      ASSERT_TRUE(out[i].ok()) << i;
      EXPECT_EQ(out[i].response->text, "fine");
    }
  }
  // The gateway's own bound (3) wins over the larger batch width.
  EXPECT_LE(backend->max_concurrency(), 3);
  EXPECT_GE(backend->max_concurrency(), 2);
}

TEST(MockTranscriptTest, DigestEntriesWinAndSequencesAdvance) {
  ChatRequest r = user_says("hello");
  r.backend_id = "mock";
  r.model_name = "m";
  json j = json::array({
      {{"prompt_substring", "hell"}, {"response_sequence", {"s1", "s2"}}},
      {{"request_digest", cache_key(r)}, {"response_text", "by digest"}},
  });
  auto backend = std::make_shared<MockBackend>(mock_entries_from_json(j));
  Gateway gw(mock_config(), backend, nullptr);
  EXPECT_EQ(gw.chat(user_says("hello")).text, "by digest");
  EXPECT_EQ(gw.chat(user_says("hello there")).text, "s1");
  EXPECT_EQ(gw.chat(user_says("hello again")).text, "s2");
  EXPECT_EQ(gw.chat(user_says("hello more")).text, "s2");
  EXPECT_EQ(error_code_of([] { mock_entries_from_json(json::array({{{"response_text", "x"}}})); }),
            "InvalidTranscript");
}

TEST(BackendConfigTest, FixtureFileResolvesTranscript) {
  auto c = BackendConfig::from_file(fixture_dir() / "backends/mock_vlm.json");
  EXPECT_EQ(c.kind, "mock");
  EXPECT_TRUE(c.vision_capable);
  EXPECT_EQ(c.retry.max_attempts, 3);
  EXPECT_EQ(c.retry.base_delay.count(), 1);
  EXPECT_TRUE(std::filesystem::exists(c.transcript));
  EXPECT_EQ(error_code_of([] { BackendConfig::from_json(json{{"retry", {{"max_attempts", 0}}}}); }),
            "InvalidConfig");
}

TEST(WireFormatTest, RequestAndResponseShapes) {
  TempDir dir;
  io::write_text(dir / "leaf.png", "PNG");
  ChatRequest r;
  r.messages.push_back({Role::kSystem, "sys", std::nullopt});
  r.messages.push_back({Role::kUser, "what is this", (dir / "leaf.png").string()});
  r.sampling_seed = 9;
  auto j = to_wire_json(r, "vision-model-1");
  EXPECT_EQ(j["model"], "vision-model-1");
  EXPECT_EQ(j["messages"][0]["content"], "sys");
  EXPECT_EQ(j["messages"][1]["content"][0]["text"], "what is this");
  EXPECT_EQ(j["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,UE5H");
  EXPECT_EQ(j["seed"], 9);

  auto resp = parse_wire_response(json::parse(
      R"js({"choices":[{"message":{"content":"hi"},"finish_reason":"length"}],"usage":{"prompt_tokens":3,"completion_tokens":1}})js"));
  EXPECT_EQ(resp.text, "hi");
  EXPECT_EQ(resp.finish_reason, "length");
  EXPECT_EQ(resp.usage.prompt_tokens, 3);
  EXPECT_EQ(error_code_of([] { parse_wire_response(json::parse(R"js({"choices":[]})js")); }), "InvalidResponse");
}

TEST(OpenAiBackendTest, TalksToLocalServer) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth, seen_model;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    seen_model = json::parse(req.body)["model"].get<std::string>();
    res.set_content(R"js({"choices":[{"message":{"content":"served"},"finish_reason":"stop"}]})js",
                    "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("AGROFORGE_TEST_TOKEN", "sekrit", 1);
  BackendConfig c = mock_config();
  c.kind = "openai";
  c.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  c.model_name = "remote-model";
  c.auth_env_var = "AGROFORGE_TEST_TOKEN";
  c.timeout_ms = 5000;
  auto gw = Gateway::create(c, nullptr);
  auto r = gw->chat(user_says("ping"));
  server.stop();
  t.join();

  EXPECT_EQ(r.text, "served");
  EXPECT_EQ(r.retries, 1);
  EXPECT_EQ(seen_auth, "Bearer sekrit");
  EXPECT_EQ(seen_model, "remote-model");
}

TEST(OpenAiBackendTest, UnreachableServerIsTransient) {
  BackendConfig c = mock_config();
  c.kind = "openai";
  c.base_url = "http://127.0.0.1:1";
  c.timeout_ms = 500;
  c.retry.max_attempts = 2;
  auto gw = Gateway::create(c, nullptr);
  EXPECT_EQ(error_code_of([&] { gw->chat(user_says("x")); }), "BackendUnavailable");
}

}  // namespace
}  // namespace agroforge
