#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agroforge/gateway.hpp"
#include "agroforge/ingest.hpp"
#include "agroforge/json_io.hpp"

namespace agroforge::evals {

enum class TaskId { kDiseasePresence, kInsectPresence, kPlantName, kFruitName, kDiseaseId, kInsectId };
enum class AnswerMode { kYesNo, kOpenShort };
enum class GradeMode { kStrict, kContainment };

std::string_view to_string(TaskId task);
TaskId parse_task(std::string_view name);  // Throws Error("UnknownTask").
std::string_view to_string(GradeMode mode);
GradeMode parse_grade_mode(std::string_view name);

struct EvalTask {
  TaskId id = TaskId::kDiseasePresence;
  int group = 1;  // 1 presence, 2 naming, 3 fine-grained identification
  AnswerMode mode = AnswerMode::kYesNo;
  std::string display_name;
  std::string question;  // includes the brevity directive
};

// The six tasks in table order.
const std::vector<EvalTask>& default_tasks();
const EvalTask& task_info(TaskId task);

struct EvalItem {
  std::string item_id;
  std::string image;
  TaskId task = TaskId::kDiseasePresence;
  int group = 1;
  std::string question;
  std::string gold;
};

ordered_json to_json(const EvalItem& item);
EvalItem eval_item_from_json(const json& j);
std::vector<EvalItem> read_eval_set(const std::filesystem::path& path);
void write_eval_set(const std::filesystem::path& path, const std::vector<EvalItem>& items);

// Presence tasks draw cap/2 positives and cap - cap/2 negatives (both limited
// by the smaller side so the split stays balanced). Open tasks draw up to cap
// records carrying the gold attribute. Errors: UnbuildableTask.
std::vector<EvalItem> build_eval_set(std::span<const DatasetCatalog> holdout, std::span<const EvalTask> tasks,
                                     std::size_t per_task_cap, std::uint64_t seed);

struct Prediction {
  std::string item_id;
  std::string raw_prediction;
  bool failed = false;
  std::string error;
};

ordered_json to_json(const Prediction& p);
Prediction prediction_from_json(const json& j);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);

struct RunOptions {
  double temperature = 0.0;
  int max_tokens = 64;
  int max_in_flight = 4;
};

// One prediction per item, in item order. Failures are flagged, not thrown.
std::vector<Prediction> run_eval(std::span<const EvalItem> items, Gateway& gateway, const RunOptions& options = {});

// lowercase, punctuation to spaces, collapse whitespace, drop leading
// articles (a, an, the).
std::string normalize_answer(std::string_view s);

// yes/no read off the first clause: the first token found in the
// affirmation or negation lexicon decides.
std::optional<bool> resolve_yes_no(std::string_view prediction);

bool grade(std::string_view raw_prediction, const EvalItem& item, GradeMode mode);

struct GradedResult {
  std::string item_id;
  TaskId task = TaskId::kDiseasePresence;
  bool correct = false;
};

// Items without a prediction, or with a failed one, grade as incorrect.
std::vector<GradedResult> grade_all(std::span<const EvalItem> items, std::span<const Prediction> predictions,
                                    GradeMode mode);

// Exact percentage, half-up rounded to hundredths: "91.67".
std::string format_percent(std::size_t correct, std::size_t total);
// Same value as an integer count of hundredths (9167).
std::int64_t percent_hundredths(std::size_t correct, std::size_t total);

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;

  std::string percent() const { return format_percent(correct, total); }
  std::int64_t hundredths() const { return percent_hundredths(correct, total); }
};

struct GroupAccuracyTable {
  std::map<TaskId, Tally> tasks;
  std::map<int, Tally> groups;

  ordered_json to_json() const;
  static GroupAccuracyTable from_json(const json& j);
  std::string render() const;
};

GroupAccuracyTable aggregate(std::span<const GradedResult> results);

struct ComparisonRow {
  TaskId task = TaskId::kDiseasePresence;
  std::vector<std::string> cells;   // one per table
  std::vector<std::string> deltas;  // vs the first table; empty for a single table
};

struct ComparisonReport {
  std::vector<std::string> names;
  std::vector<ComparisonRow> rows;

  // Rows are tasks grouped by group, one column per table, then deltas.
  std::string render_by_task() const;
  // Rows are tables, one column per task.
  std::string render_by_model() const;
  ordered_json to_json() const;
};

// Errors: MismatchedTasks when the tables do not cover the same task set.
ComparisonReport compare(std::span<const std::pair<std::string, GroupAccuracyTable>> tables);

}  // namespace agroforge::evals
