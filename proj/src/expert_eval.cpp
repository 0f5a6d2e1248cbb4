#include "agroforge/expert_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "agroforge/error.hpp"
#include "agroforge/rng.hpp"
#include "agroforge/text.hpp"

namespace fs = std::filesystem;

namespace agroforge::expert_eval {

const std::vector<Question>& default_question_bank() {
  static const std::vector<Question> kBank = {
      {"insect_q1", "How can this insect affect my crop?"},
      {"insect_q2", "What are some non-chemical ways to control the infestation of this insect in my field?"},
      {"disease_q1", "What are some biological ways to control this disease?"},
      {"disease_q2", "How can this disease affect my crop?"},
  };
  return kBank;
}

void StudyConfig::validate() const {
  if (questions.empty()) fail("InvalidConfig", "question bank is empty");
  if (items.empty()) fail("InvalidConfig", "item pool is empty");
  if (models[0].empty() || models[1].empty() || models[0] == models[1]) {
    fail("InvalidConfig", "exactly two distinct model ids are required");
  }
  std::set<std::string, std::less<>> question_ids;
  for (const auto& q : questions) {
    if (q.id.empty() || q.text.empty()) fail("InvalidConfig", "question with empty id or text");
    if (!question_ids.insert(q.id).second) fail("InvalidConfig", "duplicate question id " + q.id);
  }
  auto leaks = [&](const std::string& field) {
    return field.find(models[0]) != std::string::npos || field.find(models[1]) != std::string::npos;
  };
  std::set<std::string, std::less<>> item_ids;
  for (const auto& item : items) {
    if (item.item_id.empty()) fail("InvalidConfig", "item with empty id");
    if (!item_ids.insert(item.item_id).second) fail("InvalidConfig", "duplicate item id " + item.item_id);
    if (!question_ids.count(item.question_id)) {
      fail("InvalidConfig", item.item_id + ": unknown question id " + item.question_id);
    }
    for (const auto& model : models) {
      auto it = item.answers.find(model);
      if (it == item.answers.end() || it->second.empty()) {
        fail("InvalidConfig", item.item_id + ": missing answer from one of the models");
      }
    }
    if (item.answers.size() != 2) fail("InvalidConfig", item.item_id + ": answers from models outside the pair");
    if (leaks(item.item_id) || leaks(item.ground_truth) || leaks(item.answers.at(models[0])) ||
        leaks(item.answers.at(models[1]))) {
      fail("InvalidConfig", item.item_id + ": a model id appears in a client-visible field");
    }
  }
  for (const auto& q : questions) {
    if (leaks(q.text)) fail("InvalidConfig", "question " + q.id + " mentions a model id");
  }
}

const Question& StudyConfig::question(const std::string& id) const {
  for (const auto& q : questions) {
    if (q.id == id) return q;
  }
  fail("InvalidConfig", "unknown question id " + id);
}

ordered_json StudyConfig::to_json() const {
  ordered_json j;
  ordered_json qs = ordered_json::array();
  for (const auto& q : questions) qs.push_back({{"id", q.id}, {"text", q.text}});
  j["questions"] = std::move(qs);
  j["models"] = {models[0], models[1]};
  j["anonymize_seed"] = anonymize_seed;
  ordered_json is = ordered_json::array();
  for (const auto& item : items) {
    ordered_json ij;
    ij["item_id"] = item.item_id;
    ij["image"] = item.image;
    ij["ground_truth"] = item.ground_truth;
    ij["question_id"] = item.question_id;
    ij["answers"] = item.answers;
    is.push_back(std::move(ij));
  }
  j["items"] = std::move(is);
  return j;
}

StudyConfig StudyConfig::from_json(const json& j, const fs::path& base_dir) {
  StudyConfig config;
  try {
    if (j.contains("questions")) {
      for (const auto& qj : j.at("questions")) {
        config.questions.push_back({qj.at("id").get<std::string>(), qj.at("text").get<std::string>()});
      }
    } else {
      config.questions = default_question_bank();
    }
    const auto& models = j.at("models");
    if (!models.is_array() || models.size() != 2) fail("InvalidConfig", "models must list exactly two ids");
    config.models = {models[0].get<std::string>(), models[1].get<std::string>()};
    config.anonymize_seed = j.at("anonymize_seed").get<std::uint64_t>();
    for (const auto& ij : j.at("items")) {
      PoolItem item;
      item.item_id = ij.at("item_id").get<std::string>();
      fs::path image = ij.at("image").get<std::string>();
      if (image.is_relative() && !base_dir.empty()) image = base_dir / image;
      item.image = image.string();
      item.ground_truth = ij.value("ground_truth", std::string());
      item.question_id = ij.at("question_id").get<std::string>();
      item.answers = ij.at("answers").get<std::map<std::string, std::string>>();
      config.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    fail("InvalidConfig", e.what());
  }
  config.validate();
  return config;
}

StudyConfig StudyConfig::from_file(const fs::path& path) {
  return from_json(io::read_json(path), path.parent_path());
}

ordered_json to_json(const SessionItem& item) {
  ordered_json j;
  j["item_id"] = item.item_id;
  j["image"] = item.image;
  j["ground_truth"] = item.ground_truth;
  j["question"] = item.question;
  j["slot_a"] = item.slot_a;
  j["slot_b"] = item.slot_b;
  return j;
}

Choice parse_choice(std::string_view s) {
  if (s == "A" || s == "a") return Choice::kA;
  if (s == "B" || s == "b") return Choice::kB;
  fail("InvalidChoice", "choice must be A or B");
}

namespace {

std::string_view choice_name(Choice c) { return c == Choice::kA ? "A" : "B"; }

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03lldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(ms));
  return buf;
}

std::size_t session_number(const std::string& id) {
  constexpr std::string_view kPrefix = "session-";
  if (id.rfind(kPrefix, 0) != 0) return 0;
  try {
    return std::stoul(id.substr(kPrefix.size()));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

bool slot_flipped(std::uint64_t anonymize_seed, const std::string& item_id) {
  return (Rng::derived(anonymize_seed, "slot/" + item_id).next() >> 63) != 0;
}

int rounded_percent(std::size_t votes, std::size_t total) {
  if (total == 0) return 0;
  return static_cast<int>((200 * votes + total) / (2 * total));
}

ordered_json TallyTable::to_json() const {
  ordered_json j = ordered_json::array();
  for (const auto& row : rows) {
    ordered_json rj;
    rj["question_id"] = row.question_id;
    rj["question"] = row.question;
    rj["total_votes"] = row.total_votes;
    ordered_json ms = ordered_json::array();
    for (const auto& m : row.models) ms.push_back({{"model", m.model}, {"votes", m.votes}, {"percent", m.percent}});
    rj["models"] = std::move(ms);
    j.push_back(std::move(rj));
  }
  return {{"rows", j}};
}

std::string TallyTable::render() const {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s%-24s%8s%8s%9s\n", "Question", "Model", "Votes", "Total", "Percent");
  out << buf;
  for (const auto& row : rows) {
    for (const auto& m : row.models) {
      std::snprintf(buf, sizeof(buf), "%-12s%-24s%8zu%8zu%8d%%\n", row.question_id.c_str(), m.model.c_str(), m.votes,
                    row.total_votes, m.percent);
      out << buf;
    }
  }
  return out.str();
}

struct ExpertEvalStore::Session {
  std::string id;
  StudyConfig config;
  std::vector<std::size_t> order;  // presentation order, indices into config.items
  std::vector<bool> flipped;       // per config item
  std::map<std::string, std::size_t, std::less<>> index_by_item;
  std::map<std::string, Choice, std::less<>> votes;

  void index() {
    index_by_item.clear();
    for (std::size_t i = 0; i < config.items.size(); ++i) index_by_item[config.items[i].item_id] = i;
  }

  const std::string& model_for(std::size_t item_index, Choice choice) const {
    bool a_is_second = flipped[item_index];
    bool pick_second = (choice == Choice::kA) == a_is_second;
    return config.models[pick_second ? 1 : 0];
  }

  ordered_json to_json() const {
    ordered_json j;
    j["session_id"] = id;
    j["config"] = config.to_json();
    j["order"] = order;
    ordered_json slots = ordered_json::object();
    for (std::size_t i = 0; i < config.items.size(); ++i) {
      slots[config.items[i].item_id] = config.models[flipped[i] ? 1 : 0];
    }
    j["slot_a"] = std::move(slots);
    return j;
  }
};

ExpertEvalStore::ExpertEvalStore(fs::path data_dir) : data_dir_(std::move(data_dir)) {
  fs::create_directories(data_dir_ / "sessions");
  replay();
}

ExpertEvalStore::~ExpertEvalStore() = default;

void ExpertEvalStore::replay() {
  for (const auto& entry : fs::directory_iterator(data_dir_ / "sessions")) {
    if (entry.path().extension() != ".json") continue;
    json j = io::read_json(entry.path());
    auto s = std::make_unique<Session>();
    try {
      s->id = j.at("session_id").get<std::string>();
      s->config = StudyConfig::from_json(j.at("config"));
      s->order = j.at("order").get<std::vector<std::size_t>>();
      const auto& slots = j.at("slot_a");
      for (const auto& item : s->config.items) {
        s->flipped.push_back(slots.at(item.item_id).get<std::string>() == s->config.models[1]);
      }
    } catch (const json::exception& e) {
      fail("CorruptStore", entry.path().string() + ": " + e.what());
    }
    s->index();
    next_session_number_ = std::max(next_session_number_, session_number(s->id) + 1);
    sessions_[s->id] = std::move(s);
  }

  fs::path log = data_dir_ / "votes.jsonl";
  if (!fs::exists(log)) return;
  std::string contents = io::read_text(log);
  std::vector<std::string> lines = text::split(contents, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::trim(lines[i]).empty()) continue;
    json v;
    try {
      v = json::parse(lines[i]);
    } catch (const json::parse_error&) {
      // A torn final line is a vote that was never acknowledged.
      if (i + 1 == lines.size()) break;
      fail("CorruptStore", log.string() + ": unparsable line " + std::to_string(i + 1));
    }
    auto it = sessions_.find(v.value("session_id", std::string()));
    if (it == sessions_.end()) fail("CorruptStore", "vote for unknown session on line " + std::to_string(i + 1));
    Session& s = *it->second;
    std::string item_id = v.value("item_id", std::string());
    if (!s.index_by_item.count(item_id)) fail("CorruptStore", "vote for unknown item " + item_id);
    s.votes.emplace(item_id, parse_choice(v.value("choice", std::string())));
    ++logged_votes_;
  }
}

std::string ExpertEvalStore::create_session(const StudyConfig& config) {
  config.validate();
  auto s = std::make_unique<Session>();
  std::lock_guard lock(mu_);
  s->id = "session-" + std::to_string(next_session_number_);
  s->config = config;
  s->order.resize(config.items.size());
  for (std::size_t i = 0; i < s->order.size(); ++i) s->order[i] = i;
  Rng::derived(config.anonymize_seed, "order").shuffle(s->order);
  for (const auto& item : config.items) s->flipped.push_back(slot_flipped(config.anonymize_seed, item.item_id));
  s->index();
  io::write_text(data_dir_ / "sessions" / (s->id + ".json"), s->to_json().dump(2) + "\n");
  ++next_session_number_;
  std::string id = s->id;
  sessions_[id] = std::move(s);
  return id;
}

const ExpertEvalStore::Session& ExpertEvalStore::session(const std::string& id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) fail("UnknownSession", "no session '" + id + "'");
  return *it->second;
}

ExpertEvalStore::Session& ExpertEvalStore::session(const std::string& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) fail("UnknownSession", "no session '" + id + "'");
  return *it->second;
}

std::optional<SessionItem> ExpertEvalStore::next_item(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  const Session& s = session(session_id);
  for (std::size_t idx : s.order) {
    const PoolItem& item = s.config.items[idx];
    if (s.votes.count(item.item_id)) continue;
    SessionItem out;
    out.item_id = item.item_id;
    out.image = "/images/" + s.id + "/" + item.item_id;
    out.ground_truth = item.ground_truth;
    out.question = s.config.question(item.question_id).text;
    out.slot_a = item.answers.at(s.model_for(idx, Choice::kA));
    out.slot_b = item.answers.at(s.model_for(idx, Choice::kB));
    return out;
  }
  return std::nullopt;
}

VoteAck ExpertEvalStore::record_vote(const std::string& session_id, const std::string& item_id, Choice choice) {
  std::lock_guard lock(mu_);
  Session& s = session(session_id);
  auto idx = s.index_by_item.find(item_id);
  if (idx == s.index_by_item.end()) fail("UnknownItem", "session " + session_id + " has no item '" + item_id + "'");
  VoteAck ack;
  auto prior = s.votes.find(item_id);
  if (prior != s.votes.end()) {
    if (prior->second != choice) fail("AlreadyVoted", item_id + " already has a different vote");
    ack.duplicate = true;
  } else {
    ordered_json line;
    line["session_id"] = session_id;
    line["item_id"] = item_id;
    line["choice"] = std::string(choice_name(choice));
    line["model"] = s.model_for(idx->second, choice);
    line["timestamp"] = utc_timestamp();
    io::append_line_durable(data_dir_ / "votes.jsonl", line.dump());
    s.votes.emplace(item_id, choice);
    ++logged_votes_;
  }
  ack.progress = {s.votes.size(), s.config.items.size()};
  return ack;
}

Progress ExpertEvalStore::progress(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  const Session& s = session(session_id);
  return {s.votes.size(), s.config.items.size()};
}

TallyTable ExpertEvalStore::tally(std::span<const std::string> session_ids) const {
  std::lock_guard lock(mu_);
  std::vector<const Session*> chosen;
  if (session_ids.empty()) {
    for (const auto& [id, s] : sessions_) chosen.push_back(s.get());
  } else {
    std::set<std::string> seen;
    for (const auto& id : session_ids) {
      auto it = sessions_.find(id);
      if (it != sessions_.end() && seen.insert(id).second) chosen.push_back(it->second.get());
    }
  }
  std::sort(chosen.begin(), chosen.end(),
            [](const Session* a, const Session* b) { return session_number(a->id) < session_number(b->id); });

  std::vector<QuestionTally> rows;
  auto row_for = [&](const Question& q) -> QuestionTally& {
    for (auto& r : rows) {
      if (r.question_id == q.id) return r;
    }
    rows.push_back({q.id, q.text, 0, {}});
    return rows.back();
  };
  for (const Session* s : chosen) {
    for (const auto& q : s->config.questions) {
      QuestionTally& row = row_for(q);
      for (const auto& model : s->config.models) {
        bool present = std::any_of(row.models.begin(), row.models.end(),
                                   [&](const ModelShare& m) { return m.model == model; });
        if (!present) row.models.push_back({model, 0, 0});
      }
    }
    for (const auto& [item_id, choice] : s->votes) {
      std::size_t idx = s->index_by_item.at(item_id);
      QuestionTally& row = row_for(s->config.question(s->config.items[idx].question_id));
      const std::string& model = s->model_for(idx, choice);
      for (auto& m : row.models) {
        if (m.model == model) ++m.votes;
      }
      ++row.total_votes;
    }
  }
  TallyTable table;
  for (auto& row : rows) {
    if (row.total_votes == 0) continue;
    for (auto& m : row.models) m.percent = rounded_percent(m.votes, row.total_votes);
    table.rows.push_back(std::move(row));
  }
  return table;
}

fs::path ExpertEvalStore::image_file(const std::string& session_id, const std::string& item_id) const {
  std::lock_guard lock(mu_);
  const Session& s = session(session_id);
  auto idx = s.index_by_item.find(item_id);
  if (idx == s.index_by_item.end()) fail("UnknownItem", "session " + session_id + " has no item '" + item_id + "'");
  return s.config.items[idx->second].image;
}

std::vector<std::string> ExpertEvalStore::session_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : sessions_) ids.push_back(id);
  std::sort(ids.begin(), ids.end(),
            [](const std::string& a, const std::string& b) { return session_number(a) < session_number(b); });
  return ids;
}

std::size_t ExpertEvalStore::logged_votes() const {
  std::lock_guard lock(mu_);
  return logged_votes_;
}

}  // namespace agroforge::expert_eval
