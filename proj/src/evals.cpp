#include "agroforge/evals.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>
#include <sstream>

#include "agroforge/error.hpp"
#include "agroforge/rng.hpp"
#include "agroforge/text.hpp"

namespace agroforge::evals {

std::string_view to_string(TaskId task) {
  switch (task) {
    case TaskId::kDiseasePresence:
      return "disease_presence";
    case TaskId::kInsectPresence:
      return "insect_presence";
    case TaskId::kPlantName:
      return "plant_name";
    case TaskId::kFruitName:
      return "fruit_name";
    case TaskId::kDiseaseId:
      return "disease_id";
    case TaskId::kInsectId:
      return "insect_id";
  }
  return "disease_presence";
}

TaskId parse_task(std::string_view name) {
  for (const auto& t : default_tasks()) {
    if (to_string(t.id) == name) return t.id;
  }
  fail("UnknownTask", "unknown eval task '" + std::string(name) + "'");
}

std::string_view to_string(GradeMode mode) { return mode == GradeMode::kStrict ? "strict" : "containment"; }

GradeMode parse_grade_mode(std::string_view name) {
  if (name == "strict") return GradeMode::kStrict;
  if (name == "containment") return GradeMode::kContainment;
  fail("UsageError", "grading mode must be strict or containment");
}

const std::vector<EvalTask>& default_tasks() {
  static const std::vector<EvalTask> kTasks = {
      {TaskId::kDiseasePresence, 1, AnswerMode::kYesNo, "Disease Presence",
       "Is the plant in the image affected by a disease? Answer yes or no."},
      {TaskId::kInsectPresence, 1, AnswerMode::kYesNo, "Insect Presence",
       "Is there an insect in the image? Answer yes or no."},
      {TaskId::kPlantName, 2, AnswerMode::kOpenShort, "Plant Name",
       "What plant is shown in the image? Provide the name of the plant only."},
      {TaskId::kFruitName, 2, AnswerMode::kOpenShort, "Fruits Name",
       "What fruit is shown in the image? Provide the name of the fruit only."},
      {TaskId::kDiseaseId, 3, AnswerMode::kOpenShort, "Disease Id",
       "What disease does the plant in the image have? Provide the name of the disease only."},
      {TaskId::kInsectId, 3, AnswerMode::kOpenShort, "Insect Id",
       "What insect is shown in the image? Provide the name of the insect only."},
  };
  return kTasks;
}

const EvalTask& task_info(TaskId task) {
  for (const auto& t : default_tasks()) {
    if (t.id == task) return t;
  }
  fail("UnknownTask", "unknown eval task");
}

ordered_json to_json(const EvalItem& item) {
  ordered_json j;
  j["item_id"] = item.item_id;
  j["image"] = item.image;
  j["task"] = std::string(to_string(item.task));
  j["group"] = item.group;
  j["question"] = item.question;
  j["gold"] = item.gold;
  return j;
}

EvalItem eval_item_from_json(const json& j) {
  try {
    EvalItem item;
    item.item_id = j.at("item_id").get<std::string>();
    item.image = j.at("image").get<std::string>();
    item.task = parse_task(j.at("task").get<std::string>());
    item.group = j.at("group").get<int>();
    item.question = j.at("question").get<std::string>();
    item.gold = j.at("gold").get<std::string>();
    if (task_info(item.task).mode == AnswerMode::kYesNo && item.gold != "yes" && item.gold != "no") {
      fail("InvalidEvalItem", item.item_id + ": yes/no item with gold '" + item.gold + "'");
    }
    return item;
  } catch (const json::exception& e) {
    fail("InvalidEvalItem", e.what());
  }
}

std::vector<EvalItem> read_eval_set(const std::filesystem::path& path) {
  std::vector<EvalItem> items;
  for (const auto& row : io::read_jsonl(path)) items.push_back(eval_item_from_json(row));
  return items;
}

void write_eval_set(const std::filesystem::path& path, const std::vector<EvalItem>& items) {
  std::vector<std::string> lines;
  for (const auto& item : items) lines.push_back(to_json(item).dump());
  io::write_lines(path, lines);
}

namespace {

struct Candidate {
  std::string record_id;
  std::string image;
  std::string gold;
};

std::vector<Candidate> pick(std::vector<Candidate> pool, std::size_t k, std::uint64_t seed, const std::string& tag) {
  std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) { return a.record_id < b.record_id; });
  Rng rng = Rng::derived(seed, tag);
  std::vector<Candidate> out;
  for (std::size_t idx : rng.sample_indices(pool.size(), k)) out.push_back(pool[idx]);
  return out;
}

}  // namespace

std::vector<EvalItem> build_eval_set(std::span<const DatasetCatalog> holdout, std::span<const EvalTask> tasks,
                                     std::size_t per_task_cap, std::uint64_t seed) {
  if (per_task_cap == 0) fail("UsageError", "per-task cap must be at least 1");
  std::vector<EvalItem> items;
  for (const auto& task : tasks) {
    const std::string tag = "eval/" + std::string(to_string(task.id));
    std::vector<Candidate> chosen;
    if (task.mode == AnswerMode::kYesNo) {
      std::vector<Candidate> yes, no;
      for (const auto& c : holdout) {
        for (const auto& r : c.records) {
          Candidate cand{r.id, c.image_path(r).string(), ""};
          if (task.id == TaskId::kDiseasePresence) {
            const std::string* health = r.find(attr::kHealthStatus);
            if (!health) continue;
            (*health == "diseased" ? yes : no).push_back(std::move(cand));
          } else {
            (c.domain == Domain::kInsect ? yes : no).push_back(std::move(cand));
          }
        }
      }
      if (yes.empty() || no.empty()) {
        fail("UnbuildableTask", std::string(to_string(task.id)) + " needs both positive and negative images");
      }
      std::size_t want_yes = per_task_cap / 2;
      std::size_t want_no = per_task_cap - want_yes;
      if (yes.size() < want_yes || no.size() < want_no) {
        std::size_t m = std::min(yes.size(), no.size());
        want_yes = std::min(want_yes, m);
        want_no = std::min(want_no, m);
      }
      for (auto& cand : pick(std::move(yes), want_yes, seed, tag + "/yes")) {
        cand.gold = "yes";
        chosen.push_back(std::move(cand));
      }
      for (auto& cand : pick(std::move(no), want_no, seed, tag + "/no")) {
        cand.gold = "no";
        chosen.push_back(std::move(cand));
      }
    } else {
      std::string_view key = task.id == TaskId::kPlantName   ? attr::kPlantName
                             : task.id == TaskId::kFruitName ? attr::kFruitName
                             : task.id == TaskId::kDiseaseId ? attr::kDiseaseName
                                                             : attr::kInsectName;
      std::vector<Candidate> pool;
      for (const auto& c : holdout) {
        for (const auto& r : c.records) {
          if (const std::string* value = r.find(key)) pool.push_back({r.id, c.image_path(r).string(), *value});
        }
      }
      if (pool.empty()) fail("UnbuildableTask", std::string(to_string(task.id)) + " has no qualifying records");
      chosen = pick(std::move(pool), per_task_cap, seed, tag);
    }
    std::vector<EvalItem> task_items;
    for (auto& cand : chosen) {
      EvalItem item;
      item.item_id = std::string(to_string(task.id)) + "/" + cand.record_id;
      item.image = std::move(cand.image);
      item.task = task.id;
      item.group = task.group;
      item.question = task.question;
      item.gold = text::collapse_whitespace(text::to_lower(cand.gold));
      task_items.push_back(std::move(item));
    }
    std::sort(task_items.begin(), task_items.end(),
              [](const EvalItem& a, const EvalItem& b) { return a.item_id < b.item_id; });
    items.insert(items.end(), std::make_move_iterator(task_items.begin()), std::make_move_iterator(task_items.end()));
  }
  return items;
}

ordered_json to_json(const Prediction& p) {
  ordered_json j;
  j["item_id"] = p.item_id;
  j["raw_prediction"] = p.raw_prediction;
  j["failed"] = p.failed;
  if (!p.error.empty()) j["error"] = p.error;
  return j;
}

Prediction prediction_from_json(const json& j) {
  try {
    Prediction p;
    p.item_id = j.at("item_id").get<std::string>();
    p.raw_prediction = j.value("raw_prediction", std::string());
    p.failed = j.value("failed", false);
    p.error = j.value("error", std::string());
    return p;
  } catch (const json::exception& e) {
    fail("InvalidPrediction", e.what());
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(prediction_from_json(row));
  return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  std::vector<std::string> lines;
  for (const auto& p : predictions) lines.push_back(to_json(p).dump());
  io::write_lines(path, lines);
}

std::vector<Prediction> run_eval(std::span<const EvalItem> items, Gateway& gateway, const RunOptions& options) {
  std::vector<ChatRequest> requests;
  requests.reserve(items.size());
  for (const auto& item : items) {
    ChatRequest r;
    r.temperature = options.temperature;
    r.max_tokens = options.max_tokens;
    r.messages.push_back({Role::kUser, item.question, item.image});
    requests.push_back(std::move(r));
  }
  auto outcomes = gateway.chat_batch(requests, options.max_in_flight);
  std::vector<Prediction> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    out[i].item_id = items[i].item_id;
    if (outcomes[i].ok()) {
      out[i].raw_prediction = outcomes[i].response->text;
    } else {
      out[i].failed = true;
      out[i].error = outcomes[i].error_code;
    }
  }
  return out;
}

std::string normalize_answer(std::string_view s) {
  std::string cleaned(s);
  for (char& c : cleaned) {
    auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) c = ' ';
  }
  std::vector<std::string> words = text::split_whitespace(text::to_lower(cleaned));
  std::size_t start = 0;
  while (start < words.size() && (words[start] == "a" || words[start] == "an" || words[start] == "the")) ++start;
  std::vector<std::string> kept(words.begin() + static_cast<std::ptrdiff_t>(start), words.end());
  return text::join(kept, " ");
}

std::optional<bool> resolve_yes_no(std::string_view prediction) {
  static const std::set<std::string, std::less<>> kYes = {"yes", "yeah", "yep", "yup", "true", "correct", "affirmative"};
  static const std::set<std::string, std::less<>> kNo = {"no", "nope", "not", "false", "negative", "none"};
  std::size_t end = prediction.find_first_of(".,;:!?\n");
  std::string_view clause = prediction.substr(0, end);
  std::string lowered = text::to_lower(clause);
  for (char& c : lowered) {
    auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) c = ' ';
  }
  for (const auto& word : text::split_whitespace(lowered)) {
    if (kYes.count(word)) return true;
    if (kNo.count(word)) return false;
  }
  return std::nullopt;
}

bool grade(std::string_view raw_prediction, const EvalItem& item, GradeMode mode) {
  if (task_info(item.task).mode == AnswerMode::kYesNo) {
    auto answer = resolve_yes_no(raw_prediction);
    return answer && (*answer ? "yes" : "no") == item.gold;
  }
  std::string pred = normalize_answer(raw_prediction);
  std::string gold = normalize_answer(item.gold);
  if (gold.empty()) return false;
  if (mode == GradeMode::kStrict) return pred == gold;
  std::vector<std::string> p = text::split_whitespace(pred);
  std::vector<std::string> g = text::split_whitespace(gold);
  if (g.size() > p.size()) return false;
  for (std::size_t i = 0; i + g.size() <= p.size(); ++i) {
    if (std::equal(g.begin(), g.end(), p.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

std::vector<GradedResult> grade_all(std::span<const EvalItem> items, std::span<const Prediction> predictions,
                                    GradeMode mode) {
  std::map<std::string_view, const Prediction*> by_id;
  for (const auto& p : predictions) by_id[p.item_id] = &p;
  std::vector<GradedResult> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    auto it = by_id.find(item.item_id);
    bool correct = it != by_id.end() && !it->second->failed && grade(it->second->raw_prediction, item, mode);
    out.push_back({item.item_id, item.task, correct});
  }
  return out;
}

std::int64_t percent_hundredths(std::size_t correct, std::size_t total) {
  if (total == 0) return 0;
  auto k = static_cast<std::int64_t>(correct);
  auto n = static_cast<std::int64_t>(total);
  return (20000 * k + n) / (2 * n);
}

std::string format_percent(std::size_t correct, std::size_t total) {
  std::int64_t h = percent_hundredths(correct, total);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%lld.%02lld", static_cast<long long>(h / 100), static_cast<long long>(h % 100));
  return buf;
}

GroupAccuracyTable aggregate(std::span<const GradedResult> results) {
  GroupAccuracyTable table;
  for (const auto& r : results) {
    Tally& t = table.tasks[r.task];
    Tally& g = table.groups[task_info(r.task).group];
    ++t.total;
    ++g.total;
    if (r.correct) {
      ++t.correct;
      ++g.correct;
    }
  }
  return table;
}

ordered_json GroupAccuracyTable::to_json() const {
  ordered_json j;
  ordered_json ts = ordered_json::array();
  for (const auto& [task, tally] : tasks) {
    ts.push_back({{"task", std::string(evals::to_string(task))},
                  {"group", task_info(task).group},
                  {"correct", tally.correct},
                  {"total", tally.total},
                  {"accuracy", tally.percent()}});
  }
  j["tasks"] = std::move(ts);
  ordered_json gs = ordered_json::array();
  for (const auto& [group, tally] : groups) {
    gs.push_back({{"group", group}, {"correct", tally.correct}, {"total", tally.total}, {"accuracy", tally.percent()}});
  }
  j["groups"] = std::move(gs);
  return j;
}

GroupAccuracyTable GroupAccuracyTable::from_json(const json& j) {
  try {
    GroupAccuracyTable table;
    for (const auto& tj : j.at("tasks")) {
      TaskId task = parse_task(tj.at("task").get<std::string>());
      Tally t{tj.at("correct").get<std::size_t>(), tj.at("total").get<std::size_t>()};
      if (t.correct > t.total) fail("InvalidTable", "correct exceeds total for " + std::string(evals::to_string(task)));
      table.tasks[task] = t;
      Tally& g = table.groups[task_info(task).group];
      g.correct += t.correct;
      g.total += t.total;
    }
    return table;
  } catch (const json::exception& e) {
    fail("InvalidTable", e.what());
  }
}

std::string GroupAccuracyTable::render() const {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-8s%-18s%9s%8s%10s\n", "Group", "Task", "Correct", "Total", "Accuracy");
  out << buf;
  int last_group = 0;
  for (const auto& task : default_tasks()) {
    auto it = tasks.find(task.id);
    if (it == tasks.end()) continue;
    std::string label = task.group != last_group ? "Group" + std::to_string(task.group) : "";
    last_group = task.group;
    std::snprintf(buf, sizeof(buf), "%-8s%-18s%9zu%8zu%10s\n", label.c_str(), task.display_name.c_str(),
                  it->second.correct, it->second.total, it->second.percent().c_str());
    out << buf;
  }
  for (const auto& [group, tally] : groups) {
    std::string label = "Group" + std::to_string(group);
    std::snprintf(buf, sizeof(buf), "%-8s%-18s%9zu%8zu%10s\n", label.c_str(), "(all)", tally.correct, tally.total,
                  tally.percent().c_str());
    out << buf;
  }
  return out.str();
}

namespace {

std::string signed_hundredths(std::int64_t h) {
  char buf[32];
  std::int64_t a = h < 0 ? -h : h;
  std::snprintf(buf, sizeof(buf), "%c%lld.%02lld", h < 0 ? '-' : '+', static_cast<long long>(a / 100),
                static_cast<long long>(a % 100));
  return buf;
}

std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

ComparisonReport compare(std::span<const std::pair<std::string, GroupAccuracyTable>> tables) {
  if (tables.empty()) fail("MismatchedTasks", "nothing to compare");
  std::set<TaskId> reference;
  for (const auto& [task, tally] : tables.front().second.tasks) reference.insert(task);
  for (const auto& [name, table] : tables) {
    std::set<TaskId> mine;
    for (const auto& [task, tally] : table.tasks) mine.insert(task);
    if (mine != reference) {
      fail("MismatchedTasks", "table '" + name + "' covers a different task set than '" + tables.front().first + "'");
    }
  }
  ComparisonReport report;
  for (const auto& [name, table] : tables) report.names.push_back(name);
  for (const auto& task : default_tasks()) {
    if (!reference.count(task.id)) continue;
    ComparisonRow row;
    row.task = task.id;
    const std::int64_t base = tables.front().second.tasks.at(task.id).hundredths();
    for (std::size_t i = 0; i < tables.size(); ++i) {
      const Tally& t = tables[i].second.tasks.at(task.id);
      row.cells.push_back(t.percent());
      if (i > 0) row.deltas.push_back(signed_hundredths(t.hundredths() - base));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string ComparisonReport::render_by_task() const {
  std::vector<std::string> headers = names;
  for (std::size_t i = 1; i < names.size(); ++i) headers.push_back(names[i] + "-" + names.front());
  std::vector<std::size_t> widths;
  for (const auto& h : headers) widths.push_back(std::max<std::size_t>(h.size(), 7) + 2);

  std::ostringstream out;
  out << pad_right("", 8) << pad_right("Category", 18);
  for (std::size_t c = 0; c < headers.size(); ++c) out << pad_left(headers[c], widths[c]);
  out << "\n";
  int last_group = 0;
  for (const auto& row : rows) {
    const EvalTask& task = task_info(row.task);
    out << pad_right(task.group != last_group ? "Group" + std::to_string(task.group) : "", 8)
        << pad_right(task.display_name, 18);
    last_group = task.group;
    std::size_t c = 0;
    for (const auto& cell : row.cells) out << pad_left(cell, widths[c++]);
    for (const auto& delta : row.deltas) out << pad_left(delta, widths[c++]);
    out << "\n";
  }
  return out.str();
}

std::string ComparisonReport::render_by_model() const {
  std::size_t name_width = 8;
  for (const auto& n : names) name_width = std::max(name_width, n.size() + 2);
  std::vector<std::size_t> widths;
  std::ostringstream out;
  out << pad_right("Model", name_width);
  for (const auto& row : rows) {
    const std::string& header = task_info(row.task).display_name;
    widths.push_back(std::max<std::size_t>(header.size(), 7) + 2);
    out << pad_left(header, widths.back());
  }
  out << "\n";
  for (std::size_t m = 0; m < names.size(); ++m) {
    out << pad_right(names[m], name_width);
    for (std::size_t r = 0; r < rows.size(); ++r) out << pad_left(rows[r].cells[m], widths[r]);
    out << "\n";
  }
  return out.str();
}

ordered_json ComparisonReport::to_json() const {
  ordered_json j;
  j["models"] = names;
  ordered_json rs = ordered_json::array();
  for (const auto& row : rows) {
    ordered_json rj;
    rj["task"] = std::string(evals::to_string(row.task));
    rj["group"] = task_info(row.task).group;
    rj["accuracy"] = row.cells;
    if (!row.deltas.empty()) rj["delta"] = row.deltas;
    rs.push_back(std::move(rj));
  }
  j["rows"] = std::move(rs);
  return j;
}

}  // namespace agroforge::evals
