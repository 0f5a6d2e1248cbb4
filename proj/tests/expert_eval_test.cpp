#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "agroforge/expert_eval.hpp"
#include "httplib.h"
#include "study.hpp"

namespace agroforge::expert_eval {
namespace {

using testing::choice_for;
using testing::error_code_of;
using testing::kModelX;
using testing::kModelY;
using testing::make_study;
using testing::TempDir;

TEST(QuestionBankTest, DefaultBank) {
  const auto& bank = default_question_bank();
  ASSERT_EQ(bank.size(), 4u);
  EXPECT_EQ(bank[2].text, "What are some biological ways to control this disease?");
  EXPECT_EQ(bank[0].id, "insect_q1");
}

TEST(StudyConfigTest, RejectsLeaksAndInconsistencies) {
  TempDir dir;
  auto good = make_study(dir, 3);
  EXPECT_NO_THROW(good.validate());

  auto leak = good;
  leak.items[1].answers[kModelX] = "As " + std::string(kModelX) + ", I think so.";
  EXPECT_EQ(error_code_of([&] { leak.validate(); }), "InvalidConfig");
  auto leak_id = good;
  leak_id.items[0].item_id = std::string(kModelY) + "-0";
  EXPECT_EQ(error_code_of([&] { leak_id.validate(); }), "InvalidConfig");
  auto missing = good;
  missing.items[2].answers.erase(kModelY);
  EXPECT_EQ(error_code_of([&] { missing.validate(); }), "InvalidConfig");
  auto extra = good;
  extra.items[2].answers["third"] = "x";
  EXPECT_EQ(error_code_of([&] { extra.validate(); }), "InvalidConfig");
  auto dup = good;
  dup.items[1].item_id = dup.items[0].item_id;
  EXPECT_EQ(error_code_of([&] { dup.validate(); }), "InvalidConfig");
  auto unknown_q = good;
  unknown_q.items[0].question_id = "weed_q9";
  EXPECT_EQ(error_code_of([&] { unknown_q.validate(); }), "InvalidConfig");
  auto same = good;
  same.models[1] = same.models[0];
  EXPECT_EQ(error_code_of([&] { same.validate(); }), "InvalidConfig");

  auto back = StudyConfig::from_json(json::parse(good.to_json().dump()));
  EXPECT_EQ(back.items.size(), 3u);
  EXPECT_EQ(back.models, good.models);
  EXPECT_EQ(error_code_of([] { StudyConfig::from_json(json::parse(R"js({"models":["a"]})js")); }), "InvalidConfig");
}

TEST(ChoiceTest, Parse) {
  EXPECT_EQ(parse_choice("a"), Choice::kA);
  EXPECT_EQ(parse_choice("B"), Choice::kB);
  EXPECT_EQ(error_code_of([] { parse_choice("C"); }), "InvalidChoice");
  EXPECT_EQ(error_code_of([] { parse_choice(""); }), "InvalidChoice");
}

TEST(RoundedPercentTest, HalfUp) {
  EXPECT_EQ(rounded_percent(43, 50), 86);
  EXPECT_EQ(rounded_percent(7, 50), 14);
  EXPECT_EQ(rounded_percent(1, 8), 13);  // 12.5
  EXPECT_EQ(rounded_percent(1, 3), 33);
  EXPECT_EQ(rounded_percent(0, 0), 0);
}

TEST(SlotTest, FlipIsBalancedAndStable) {
  std::size_t flipped = 0;
  for (int i = 0; i < 10000; ++i) flipped += slot_flipped(3, "item-" + std::to_string(i));
  EXPECT_GE(flipped, 4800u);
  EXPECT_LE(flipped, 5200u);
  EXPECT_EQ(slot_flipped(3, "x"), slot_flipped(3, "x"));
}

TEST(StoreTest, TallyOfFiftyVotes) {
  TempDir dir;
  auto config = make_study(dir, 50);
  ExpertEvalStore store(dir / "data");
  auto sid = store.create_session(config);
  EXPECT_EQ(sid, "session-1");
  for (std::size_t i = 0; i < 50; ++i) {
    std::string id = "item-" + std::to_string(i);
    auto ack = store.record_vote(sid, id, choice_for(config, id, i < 43 ? kModelX : kModelY));
    EXPECT_EQ(ack.progress.voted, i + 1);
    EXPECT_FALSE(ack.duplicate);
  }
  EXPECT_FALSE(store.next_item(sid).has_value());

  // All items ask one of two questions; sum over both rows.
  auto table = store.tally({});
  std::size_t x = 0, y = 0, total = 0;
  for (const auto& row : table.rows) {
    total += row.total_votes;
    for (const auto& m : row.models) (m.model == kModelX ? x : y) += m.votes;
  }
  EXPECT_EQ(total, 50u);
  EXPECT_EQ(x, 43u);
  EXPECT_EQ(y, 7u);
  EXPECT_EQ(rounded_percent(x, total), 86);
  EXPECT_EQ(rounded_percent(y, total), 14);
}

TEST(StoreTest, SingleQuestionTallyRow) {
  TempDir dir;
  auto config = make_study(dir, 50);
  for (auto& item : config.items) item.question_id = "disease_q1";
  ExpertEvalStore store(dir / "data");
  auto sid = store.create_session(config);
  for (std::size_t i = 0; i < 50; ++i) {
    std::string id = "item-" + std::to_string(i);
    store.record_vote(sid, id, choice_for(config, id, i < 43 ? kModelX : kModelY));
  }
  auto table = store.tally({});
  ASSERT_EQ(table.rows.size(), 1u);
  EXPECT_EQ(table.rows[0].question_id, "disease_q1");
  ASSERT_EQ(table.rows[0].models.size(), 2u);
  EXPECT_EQ(table.rows[0].models[0].model, kModelX);
  EXPECT_EQ(table.rows[0].models[0].percent, 86);
  EXPECT_EQ(table.rows[0].models[1].percent, 14);
  EXPECT_NE(table.render().find("86%"), std::string::npos);
  EXPECT_EQ(table.to_json()["rows"][0]["models"][1]["votes"], 7);
}

TEST(StoreTest, DuplicateAndConflictingVotes) {
  TempDir dir;
  auto config = make_study(dir, 4);
  ExpertEvalStore store(dir / "data");
  auto sid = store.create_session(config);
  EXPECT_FALSE(store.record_vote(sid, "item-1", Choice::kA).duplicate);
  auto again = store.record_vote(sid, "item-1", Choice::kA);
  EXPECT_TRUE(again.duplicate);
  EXPECT_EQ(again.progress.voted, 1u);
  EXPECT_EQ(store.logged_votes(), 1u);
  EXPECT_EQ(error_code_of([&] { store.record_vote(sid, "item-1", Choice::kB); }), "AlreadyVoted");
  EXPECT_EQ(error_code_of([&] { store.record_vote(sid, "item-9", Choice::kB); }), "UnknownItem");
  EXPECT_EQ(error_code_of([&] { store.record_vote("session-9", "item-1", Choice::kB); }), "UnknownSession");
  EXPECT_EQ(error_code_of([&] { store.next_item("nope"); }), "UnknownSession");
}

TEST(StoreTest, NextItemHidesModelsAndFollowsOrder) {
  TempDir dir;
  auto config = make_study(dir, 6);
  ExpertEvalStore store(dir / "data");
  auto sid = store.create_session(config);
  std::vector<std::string> order;
  while (auto item = store.next_item(sid)) {
    std::string body = to_json(*item).dump();
    EXPECT_EQ(body.find(kModelX), std::string::npos);
    EXPECT_EQ(body.find(kModelY), std::string::npos);
    EXPECT_EQ(item->image, "/images/" + sid + "/" + item->item_id);
    const auto& answers = config.items[std::stoul(item->item_id.substr(5))].answers;
    bool flipped = slot_flipped(config.anonymize_seed, item->item_id);
    EXPECT_EQ(item->slot_a, answers.at(flipped ? kModelY : kModelX));
    EXPECT_EQ(item->slot_b, answers.at(flipped ? kModelX : kModelY));
    order.push_back(item->item_id);
    store.record_vote(sid, item->item_id, Choice::kB);
  }
  EXPECT_EQ(order.size(), 6u);

  // A second session with the same seed presents the same order.
  auto sid2 = store.create_session(config);
  std::vector<std::string> order2;
  while (auto item = store.next_item(sid2)) {
    order2.push_back(item->item_id);
    store.record_vote(sid2, item->item_id, Choice::kA);
  }
  EXPECT_EQ(order, order2);
  EXPECT_EQ(store.session_ids(), (std::vector<std::string>{"session-1", "session-2"}));
}

TEST(StoreTest, TallyFiltersSessions) {
  TempDir dir;
  auto config = make_study(dir, 2);
  ExpertEvalStore store(dir / "data");
  auto s1 = store.create_session(config);
  auto s2 = store.create_session(config);
  store.record_vote(s1, "item-0", choice_for(config, "item-0", kModelX));
  store.record_vote(s2, "item-0", choice_for(config, "item-0", kModelY));
  store.record_vote(s2, "item-1", choice_for(config, "item-1", kModelY));
  std::vector<std::string> only2 = {s2, "session-77"};
  std::size_t y = 0;
  for (const auto& row : store.tally(only2).rows) {
    for (const auto& m : row.models) {
      if (m.model == kModelY) y += m.votes;
      if (m.model == kModelX) {
        EXPECT_EQ(m.votes, 0u);
      }
    }
  }
  EXPECT_EQ(y, 2u);
  std::size_t all = 0;
  for (const auto& row : store.tally({}).rows) all += row.total_votes;
  EXPECT_EQ(all, 3u);
}

TEST(StoreTest, VotesSurviveRestart) {
  TempDir dir;
  auto config = make_study(dir, 10);
  std::string sid;
  {
    ExpertEvalStore store(dir / "data");
    sid = store.create_session(config);
    for (int i = 0; i < 6; ++i) {
      std::string id = "item-" + std::to_string(i);
      store.record_vote(sid, id, choice_for(config, id, kModelX));
    }
  }
  ExpertEvalStore reopened(dir / "data");
  EXPECT_EQ(reopened.progress(sid).voted, 6u);
  EXPECT_EQ(reopened.logged_votes(), 6u);
  EXPECT_TRUE(reopened.record_vote(sid, "item-0", choice_for(config, "item-0", kModelX)).duplicate);
  EXPECT_EQ(reopened.create_session(config), "session-2");
}

TEST(StoreTest, TornFinalLineIsDropped) {
  TempDir dir;
  auto config = make_study(dir, 3);
  std::string sid;
  {
    ExpertEvalStore store(dir / "data");
    sid = store.create_session(config);
    store.record_vote(sid, "item-0", Choice::kA);
  }
  {
    std::ofstream log(dir / "data/votes.jsonl", std::ios::app);
    log << R"({"session_id":")" << sid << R"(","item_id":"item-1","cho)";
  }
  ExpertEvalStore reopened(dir / "data");
  EXPECT_EQ(reopened.progress(sid).voted, 1u);

  // Garbage before the end is corruption, not a torn write.
  io::write_text(dir / "data/votes.jsonl", "garbage\n{\"session_id\":\"" + sid + "\",\"item_id\":\"item-0\",\"choice\":\"A\"}\n");
  EXPECT_EQ(error_code_of([&] { ExpertEvalStore bad(dir / "data"); }), "CorruptStore");
}

struct Running {
  ExpertEvalStore store;
  ExpertEvalServer server;
  int port = 0;
  std::thread thread;

  Running(const std::filesystem::path& data, std::optional<StudyConfig> config)
      : store(data), server(store, std::move(config)) {
    port = server.bind("127.0.0.1", 0);
    thread = std::thread([this] { server.serve(); });
    server.wait_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }
};

TEST(ServerTest, RaterFlowOverHttp) {
  TempDir dir;
  auto config = make_study(dir, 5);
  Running running(dir / "data", config);
  httplib::Client client("127.0.0.1", running.port);

  auto created = client.Post("/sessions", "", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  auto sid = json::parse(created->body)["session_id"].get<std::string>();
  std::string everything_seen = created->body;

  int steps = 0;
  while (true) {
    auto next = client.Get("/sessions/" + sid + "/next");
    ASSERT_TRUE(next);
    ASSERT_EQ(next->status, 200);
    everything_seen += next->body;
    auto body = json::parse(next->body);
    if (body["done"]) break;
    auto item = body["item"];
    auto image = client.Get(item["image"].get<std::string>());
    ASSERT_TRUE(image);
    EXPECT_EQ(image->status, 200);
    EXPECT_EQ(image->body, "image " + item["item_id"].get<std::string>());
    json vote = {{"item_id", item["item_id"]}, {"choice", "A"}};
    auto voted = client.Post("/sessions/" + sid + "/votes", vote.dump(), "application/json");
    ASSERT_TRUE(voted);
    EXPECT_EQ(voted->status, 200);
    everything_seen += voted->body;
    EXPECT_EQ(json::parse(voted->body)["progress"]["voted"], ++steps);
  }
  EXPECT_EQ(steps, 5);
  EXPECT_EQ(everything_seen.find(kModelX), std::string::npos);
  EXPECT_EQ(everything_seen.find(kModelY), std::string::npos);

  auto tally = client.Get("/tally?sessions=" + sid);
  ASSERT_TRUE(tally);
  std::size_t total = 0;
  auto tally_json = json::parse(tally->body);
  for (const auto& row : tally_json["rows"]) total += row["total_votes"].get<std::size_t>();
  EXPECT_EQ(total, 5u);
}

TEST(ServerTest, ErrorStatuses) {
  TempDir dir;
  auto config = make_study(dir, 2);
  Running running(dir / "data", std::nullopt);
  httplib::Client client("127.0.0.1", running.port);

  auto no_default = client.Post("/sessions", "", "application/json");
  ASSERT_TRUE(no_default);
  EXPECT_EQ(no_default->status, 400);
  auto created = client.Post("/sessions", config.to_json().dump(), "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201);
  auto sid = json::parse(created->body)["session_id"].get<std::string>();

  auto missing = client.Get("/sessions/session-42/next");
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["error"], "UnknownSession");

  auto post = [&](const std::string& body) { return client.Post("/sessions/" + sid + "/votes", body, "application/json"); };
  EXPECT_EQ(post(R"js({"item_id":"item-0","choice":"A"})js")->status, 200);
  auto dup = post(R"js({"item_id":"item-0","choice":"A"})js");
  EXPECT_EQ(dup->status, 200);
  EXPECT_TRUE(json::parse(dup->body)["duplicate"].get<bool>());
  EXPECT_EQ(post(R"js({"item_id":"item-0","choice":"B"})js")->status, 409);
  EXPECT_EQ(post(R"js({"item_id":"item-7","choice":"B"})js")->status, 404);
  EXPECT_EQ(post(R"js({"item_id":"item-1","choice":"maybe"})js")->status, 400);
  EXPECT_EQ(post("not json")->status, 400);
  EXPECT_EQ(client.Get("/images/" + sid + "/item-9")->status, 404);
}

TEST(ServerTest, BindConflictIsReported) {
  TempDir dir;
  Running first(dir / "a", std::nullopt);
  ExpertEvalStore store(dir / "b");
  ExpertEvalServer second(store, std::nullopt);
  EXPECT_EQ(error_code_of([&] { second.bind("127.0.0.1", first.port); }), "BindFailed");
}

}  // namespace
}  // namespace agroforge::expert_eval
