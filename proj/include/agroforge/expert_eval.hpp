#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agroforge/json_io.hpp"

namespace agroforge::expert_eval {

struct Question {
  std::string id;
  std::string text;
};

// Two insect and two disease questions used when a config gives no bank.
const std::vector<Question>& default_question_bank();

struct PoolItem {
  std::string item_id;
  std::string image;
  std::string ground_truth;
  std::string question_id;
  std::map<std::string, std::string> answers;  // model_id -> answer text
};

struct StudyConfig {
  std::vector<Question> questions;
  std::vector<PoolItem> items;
  std::array<std::string, 2> models;
  std::uint64_t anonymize_seed = 0;

  // Errors: InvalidConfig. Also rejects configs where a model id would leak
  // into a client-visible field.
  void validate() const;
  const Question& question(const std::string& id) const;

  ordered_json to_json() const;
  // Relative image paths resolve against base_dir.
  static StudyConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
  static StudyConfig from_file(const std::filesystem::path& path);
};

// What the rater sees. Carries no model identity.
struct SessionItem {
  std::string item_id;
  std::string image;  // URL path served by the service
  std::string ground_truth;
  std::string question;
  std::string slot_a;
  std::string slot_b;
};

ordered_json to_json(const SessionItem& item);

enum class Choice { kA, kB };
Choice parse_choice(std::string_view s);  // "A"/"B", any case. Errors: InvalidChoice.

// True when the second model of the pair lands in slot A.
bool slot_flipped(std::uint64_t anonymize_seed, const std::string& item_id);

struct Progress {
  std::size_t voted = 0;
  std::size_t total = 0;
};

struct VoteAck {
  Progress progress;
  bool duplicate = false;
};

struct ModelShare {
  std::string model;
  std::size_t votes = 0;
  int percent = 0;
};

struct QuestionTally {
  std::string question_id;
  std::string question;
  std::size_t total_votes = 0;
  std::vector<ModelShare> models;
};

struct TallyTable {
  std::vector<QuestionTally> rows;

  ordered_json to_json() const;
  std::string render() const;
};

// 100 * votes / total rounded half-up to an integer; 0 when total is 0.
int rounded_percent(std::size_t votes, std::size_t total);

// Session and vote state under one directory:
//   sessions/<id>.json  config, item order and slot mapping
//   votes.jsonl         append-only vote log, fsynced per vote
// Opening a directory replays both, so acknowledged votes survive restarts.
// All operations are serialized on one mutex.
class ExpertEvalStore {
 public:
  explicit ExpertEvalStore(std::filesystem::path data_dir);
  ~ExpertEvalStore();

  ExpertEvalStore(const ExpertEvalStore&) = delete;
  ExpertEvalStore& operator=(const ExpertEvalStore&) = delete;

  std::string create_session(const StudyConfig& config);
  // nullopt once every item has a vote. Errors: UnknownSession.
  std::optional<SessionItem> next_item(const std::string& session_id) const;
  // Errors: UnknownSession, UnknownItem, AlreadyVoted.
  VoteAck record_vote(const std::string& session_id, const std::string& item_id, Choice choice);
  Progress progress(const std::string& session_id) const;
  // Empty list tallies every session.
  TallyTable tally(std::span<const std::string> session_ids) const;
  // Server-side path of an item's image. Errors: UnknownSession, UnknownItem.
  std::filesystem::path image_file(const std::string& session_id, const std::string& item_id) const;
  std::vector<std::string> session_ids() const;

  // Lines in the vote log.
  std::size_t logged_votes() const;

 private:
  struct Session;

  void replay();
  const Session& session(const std::string& id) const;
  Session& session(const std::string& id);

  std::filesystem::path data_dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::size_t next_session_number_ = 1;
  std::size_t logged_votes_ = 0;
};

// HTTP+JSON front end over a store.
//   POST /sessions               body: study config, or empty for the default
//   GET  /sessions/{id}/next
//   POST /sessions/{id}/votes    body: {"item_id", "choice"}
//   GET  /tally?sessions=a,b
//   GET  /images/{id}/{item_id}
//   GET  /*                      static files when a static dir is set
// Errors come back as {"error": <name>, "message": <text>}.
class ExpertEvalServer {
 public:
  ExpertEvalServer(ExpertEvalStore& store, std::optional<StudyConfig> default_config,
                   std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~ExpertEvalServer();

  // Returns the bound port (port 0 picks a free one). Errors: BindFailed.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  // Blocks until serve() is accepting connections.
  void wait_ready();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace agroforge::expert_eval
