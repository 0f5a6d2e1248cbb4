#include "agroforge/cli.hpp"

#include <algorithm>
#include <csignal>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "agroforge/corpus.hpp"
#include "agroforge/error.hpp"
#include "agroforge/evals.hpp"
#include "agroforge/expert_eval.hpp"
#include "agroforge/gateway.hpp"
#include "agroforge/ingest.hpp"
#include "agroforge/knowledge.hpp"
#include "agroforge/simpleqa.hpp"
#include "agroforge/synthesis.hpp"
#include "agroforge/text.hpp"

#ifndef AGROFORGE_ASSET_DIR
#define AGROFORGE_ASSET_DIR "assets"
#endif

namespace fs = std::filesystem;

namespace agroforge::cli {

namespace {

class Logger {
 public:
  Logger(std::ostream& err, bool as_json) : err_(err), as_json_(as_json) {}

  void event(std::string_view stage, std::string_view name, const ordered_json& fields = ordered_json::object()) {
    if (as_json_) {
      ordered_json line;
      line["stage"] = stage;
      line["event"] = name;
      for (const auto& [k, v] : fields.items()) line[k] = v;
      err_ << line.dump() << "\n";
      return;
    }
    err_ << "[" << stage << "] " << name;
    for (const auto& [k, v] : fields.items()) err_ << " " << k << "=" << (v.is_string() ? v.get<std::string>() : v.dump());
    err_ << "\n";
  }

 private:
  std::ostream& err_;
  bool as_json_;
};

struct Globals {
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  bool dry_run = false;
  bool log_json = false;

  std::uint64_t require_seed(std::string_view command) const {
    if (seed_opt->count() == 0) {
      fail("UsageError", std::string(command) + " needs an explicit --seed");
    }
    return seed;
  }
};

struct AssetPaths {
  std::string dir = AGROFORGE_ASSET_DIR;

  fs::path questions() const { return fs::path(dir) / "description_questions.json"; }
  fs::path prompts() const { return fs::path(dir) / "prompts.json"; }
  fs::path examples() const { return fs::path(dir) / "example_bank.json"; }
  fs::path system_messages() const { return fs::path(dir) / "system_messages.json"; }
};

struct BackendOptions {
  std::string backend;
  std::string transcript;
  std::string cache_dir;
  int max_in_flight = 0;

  void add_to(CLI::App* sub) {
    sub->add_option("--backend", backend, "Backend config file, or 'mock'")->required();
    sub->add_option("--transcript", transcript, "Mock transcript (with --backend mock)");
    sub->add_option("--cache-dir", cache_dir, "Persistent response cache directory");
    sub->add_option("--max-in-flight", max_in_flight, "Concurrent requests (default: backend config)");
  }

  BackendConfig resolve() const {
    BackendConfig config;
    if (backend == "mock") {
      if (transcript.empty()) fail("UsageError", "--backend mock needs --transcript");
      config.backend_id = "mock";
      config.kind = "mock";
      config.model_name = "mock-model";
      config.vision_capable = true;
      config.retry.base_delay = std::chrono::milliseconds(1);
      config.retry.max_delay = std::chrono::milliseconds(10);
    } else {
      config = BackendConfig::from_file(backend);
    }
    if (!transcript.empty()) config.transcript = transcript;
    if (config.kind == "mock" && !fs::exists(config.transcript)) {
      fail("InvalidConfig", "mock transcript " + config.transcript.string() + " does not exist");
    }
    if (max_in_flight > 0) config.max_in_flight = max_in_flight;
    return config;
  }

  std::unique_ptr<Gateway> connect(const BackendConfig& config) const {
    std::optional<fs::path> dir;
    if (!cache_dir.empty()) dir = fs::path(cache_dir);
    return Gateway::create(config, std::make_shared<ResponseCache>(dir));
  }
};

std::vector<DatasetCatalog> read_catalogs(const std::vector<std::string>& paths) {
  std::vector<DatasetCatalog> catalogs;
  for (const auto& p : paths) catalogs.push_back(read_catalog(p));
  return catalogs;
}

std::vector<SourceImage> all_source_images(const std::vector<DatasetCatalog>& catalogs) {
  std::vector<SourceImage> images;
  for (const auto& c : catalogs) {
    auto part = source_images(c);
    images.insert(images.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return images;
}

fs::path sibling(const fs::path& out, std::string_view suffix) {
  fs::path p = out;
  p.replace_extension();
  p += suffix;
  return p;
}

void write_failures(const fs::path& path, const std::vector<GenerationFailure>& failures) {
  std::vector<std::string> lines;
  for (const auto& f : failures) {
    ordered_json j;
    j["image_id"] = f.image_id;
    j["error"] = f.error_code;
    j["message"] = f.message;
    lines.push_back(j.dump());
  }
  io::write_lines(path, lines);
}

std::string gateway_summary(const Gateway& gw) {
  GatewayStats s = gw.stats();
  return "network_calls=" + std::to_string(s.network_calls) + " cache_hits=" + std::to_string(s.cache_hits) +
         " retries=" + std::to_string(s.retries);
}

// --- ingest ---------------------------------------------------------------

struct IngestCmd {
  std::string manifest;
  std::string out;
  double holdout_fraction = -1;
  CLI::Option* fraction_opt = nullptr;
  std::string train_out;
  std::string holdout_out;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("ingest", "Catalog a class-per-folder image dataset");
    sub->add_option("--manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Catalog output file")->required();
    fraction_opt = sub->add_option("--holdout-fraction", holdout_fraction, "Per-class holdout share");
    sub->add_option("--train-out", train_out, "Train split catalog");
    sub->add_option("--holdout-out", holdout_out, "Holdout split catalog");
  }

  int run(const Globals& g, std::ostream& out_stream, Logger& log) {
    const bool split = fraction_opt->count() > 0;
    std::uint64_t seed = 0;
    if (split) {
      seed = g.require_seed("ingest --holdout-fraction");
      if (train_out.empty() || holdout_out.empty()) {
        fail("UsageError", "--holdout-fraction needs --train-out and --holdout-out");
      }
    }
    DatasetManifest m = DatasetManifest::from_file(manifest);
    DatasetCatalog catalog = load_dataset(m);
    std::optional<HoldoutSplit> parts;
    if (split) parts = split_holdout(catalog, holdout_fraction, seed);

    if (g.dry_run) {
      out_stream << "plan: ingest " << catalog.dataset_id << " (" << to_string(catalog.domain) << ", "
                 << catalog.classes.size() << " classes, " << catalog.records.size() << " images) -> " << out << "\n";
      if (parts) {
        out_stream << "plan: split " << parts->train.records.size() << " train -> " << train_out << ", "
                   << parts->holdout.records.size() << " holdout -> " << holdout_out << "\n";
      }
      return kExitOk;
    }
    write_catalog(out, catalog);
    log.event("ingest", "catalog_written",
              {{"dataset", catalog.dataset_id}, {"classes", catalog.classes.size()}, {"images", catalog.records.size()}});
    if (parts) {
      write_catalog(train_out, parts->train);
      write_catalog(holdout_out, parts->holdout);
      log.event("ingest", "split_written",
                {{"train", parts->train.records.size()}, {"holdout", parts->holdout.records.size()}});
    }
    out_stream << catalog.dataset_id << ": " << catalog.classes.size() << " classes, " << catalog.records.size()
               << " images\n";
    return kExitOk;
  }
};

// --- knowledge -------------------------------------------------------------

struct KnowledgeCmd {
  CLI::App* verify = nullptr;
  std::string kb;
  std::vector<std::string> catalogs;
  bool allow_missing = false;
  std::string json_out;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("knowledge", "Curated class knowledge");
    sub->require_subcommand(1);
    verify = sub->add_subcommand("verify", "Check knowledge coverage of catalog classes");
    verify->add_option("--kb", kb, "Knowledge root directory")->required()->check(CLI::ExistingDirectory);
    verify->add_option("--catalog", catalogs, "Catalog files")->required()->check(CLI::ExistingFile);
    verify->add_flag("--allow-missing", allow_missing, "Report gaps without failing");
    verify->add_option("--json-out", json_out, "Coverage report as JSON");
  }

  int run(const Globals& g, std::ostream& out, Logger& log) {
    KnowledgeBase base = load_knowledge(kb);
    std::vector<DatasetCatalog> cats = read_catalogs(catalogs);
    CoverageReport report = coverage_report(base, cats);
    out << report.render();
    if (!json_out.empty() && !g.dry_run) io::write_text(json_out, report.to_json().dump(2) + "\n");
    log.event("knowledge", "coverage", {{"covered", report.covered()}, {"total", report.total()}});
    if (!report.complete() && !allow_missing) {
      fail("KnowledgeMissing", std::to_string(report.total() - report.covered()) + " of " +
                                   std::to_string(report.total()) + " classes have no knowledge entry");
    }
    return kExitOk;
  }
};

// --- synth-desc ------------------------------------------------------------

struct SynthDescCmd {
  std::vector<std::string> catalogs;
  AssetPaths assets;
  BackendOptions backend;
  int per_record = 1;
  std::string out;
  std::string failures_out;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("synth-desc", "Generate context-grounded image descriptions");
    sub->add_option("--catalog", catalogs, "Train catalogs")->required()->check(CLI::ExistingFile);
    sub->add_option("--assets", assets.dir, "Asset directory")->check(CLI::ExistingDirectory);
    backend.add_to(sub);
    sub->add_option("--per-record", per_record, "Distinct questions per image")->check(CLI::Range(1, 10));
    sub->add_option("--out", out, "Descriptions JSONL")->required();
    sub->add_option("--failures-out", failures_out, "Failed images JSONL");
  }

  int run(const Globals& g, std::ostream& out_stream, Logger& log) {
    std::uint64_t seed = g.require_seed("synth-desc");
    auto qset = DescriptionQuestionSet::from_file(assets.questions());
    auto prompts = PromptBank::from_file(assets.prompts());
    BackendConfig config = backend.resolve();
    auto images = all_source_images(read_catalogs(catalogs));
    if (g.dry_run) {
      out_stream << "plan: describe " << images.size() << " images x " << per_record << " via " << config.backend_id
                 << " (" << config.model_name << ") -> " << out << "\n";
      return kExitOk;
    }
    auto gateway = backend.connect(config);
    DescriptionOptions options;
    options.per_record = per_record;
    options.max_in_flight = config.max_in_flight;
    DescriptionRun result = generate_descriptions(images, qset, *gateway, prompts, seed, options);
    write_descriptions(out, result.descriptions);
    if (!failures_out.empty()) write_failures(failures_out, result.failures);
    log.event("synth-desc", "done",
              {{"descriptions", result.descriptions.size()},
               {"failures", result.failures.size()},
               {"network_calls", gateway->stats().network_calls}});
    out_stream << result.descriptions.size() << " descriptions, " << result.failures.size() << " failures ("
               << gateway_summary(*gateway) << ")\n";
    return kExitOk;
  }
};

// --- synth-conv ------------------------------------------------------------

struct SynthConvCmd {
  std::vector<std::string> catalogs;
  std::string descriptions;
  std::string kb;
  AssetPaths assets;
  BackendOptions backend;
  std::size_t excerpt_bytes = kDefaultExcerptChars;
  int max_attempts = 3;
  std::string out;
  std::string failures_out;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("synth-conv", "Generate multi-turn conversations from assembled context");
    sub->add_option("--catalog", catalogs, "Train catalogs")->required()->check(CLI::ExistingFile);
    sub->add_option("--descriptions", descriptions, "Descriptions JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--kb", kb, "Knowledge root directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--assets", assets.dir, "Asset directory")->check(CLI::ExistingDirectory);
    backend.add_to(sub);
    sub->add_option("--excerpt-bytes", excerpt_bytes, "Knowledge excerpt limit");
    sub->add_option("--max-attempts", max_attempts, "Attempts per image")->check(CLI::Range(1, 20));
    sub->add_option("--out", out, "Conversations JSONL")->required();
    sub->add_option("--failures-out", failures_out, "Failed images JSONL");
  }

  int run(const Globals& g, std::ostream& out_stream, Logger& log) {
    std::uint64_t seed = g.require_seed("synth-conv");
    auto prompts = PromptBank::from_file(assets.prompts());
    auto examples = ExampleBank::from_file(assets.examples());
    KnowledgeBase base = load_knowledge(kb);
    BackendConfig config = backend.resolve();
    auto images = all_source_images(read_catalogs(catalogs));
    std::vector<Description> descs = read_descriptions(descriptions);

    std::map<std::string, std::vector<const Description*>> by_image;
    for (const auto& d : descs) by_image[d.image_id].push_back(&d);

    std::vector<GenerationContext> contexts;
    std::vector<GenerationFailure> failures;
    for (const auto& image : images) {
      auto it = by_image.find(image.record.id);
      const Description* chosen = it == by_image.end() ? nullptr : choose_description(it->second, seed);
      if (!chosen) {
        failures.push_back({image.record.id, "MissingDescription", "no description generated for this image"});
        continue;
      }
      try {
        contexts.push_back(assemble_context(image, chosen->text, base, examples, prompts, excerpt_bytes));
      } catch (const Error& e) {
        failures.push_back({image.record.id, e.code(), e.message()});
      }
    }
    if (g.dry_run) {
      out_stream << "plan: converse " << contexts.size() << " images (" << failures.size()
                 << " without context) via " << config.backend_id << " (" << config.model_name << ") -> " << out
                 << "\n";
      return kExitOk;
    }
    auto gateway = backend.connect(config);
    ConversationOptions options;
    options.seed = seed;
    options.max_attempts = max_attempts;
    ConversationRun result = generate_conversations(contexts, *gateway, options, config.max_in_flight);
    failures.insert(failures.end(), result.failures.begin(), result.failures.end());
    std::sort(failures.begin(), failures.end(),
              [](const GenerationFailure& a, const GenerationFailure& b) { return a.image_id < b.image_id; });
    write_conversations(out, result.conversations);
    if (!failures_out.empty()) write_failures(failures_out, failures);
    for (const auto& f : failures) log.event("synth-conv", "failure", {{"image_id", f.image_id}, {"error", f.error_code}});
    log.event("synth-conv", "done",
              {{"conversations", result.conversations.size()},
               {"failures", failures.size()},
               {"network_calls", gateway->stats().network_calls}});
    out_stream << result.conversations.size() << " conversations, " << failures.size() << " failures ("
               << gateway_summary(*gateway) << ")\n";
    return kExitOk;
  }
};

// --- synth-simple ----------------------------------------------------------

struct SynthSimpleCmd {
  std::vector<std::string> catalogs;
  std::string templates;
  std::string out;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("synth-simple", "Render rule-based single-attribute QA");
    sub->add_option("--catalog", catalogs, "Train catalogs")->required()->check(CLI::ExistingFile);
    sub->add_option("--templates", templates, "Template asset (default: built-in)")->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Simple QA JSONL")->required();
  }

  int run(const Globals& g, std::ostream& out_stream, Logger& log) {
    std::uint64_t seed = g.require_seed("synth-simple");
    std::map<Domain, std::vector<QATemplate>> custom;
    if (!templates.empty()) custom = templates_from_json(io::read_json(templates));
    std::vector<Conversation> conversations;
    std::size_t images = 0;
    for (const auto& catalog : read_catalogs(catalogs)) {
      auto it = custom.find(catalog.domain);
      std::vector<QATemplate> set = it != custom.end() ? it->second : default_templates(catalog.domain);
      for (const auto& record : catalog.records) {
        ++images;
        for (const auto& qa : render(record, set, seed)) conversations.push_back(to_conversation(qa, catalog.domain));
      }
    }
    std::sort(conversations.begin(), conversations.end(),
              [](const Conversation& a, const Conversation& b) { return a.id < b.id; });
    if (g.dry_run) {
      out_stream << "plan: " << conversations.size() << " simple QA pairs from " << images << " images -> " << out
                 << "\n";
      return kExitOk;
    }
    write_conversations(out, conversations);
    log.event("synth-simple", "done", {{"pairs", conversations.size()}, {"images", images}});
    out_stream << conversations.size() << " simple QA pairs\n";
    return kExitOk;
  }
};

// --- assemble --------------------------------------------------------------

struct AssembleCmd {
  std::string pools_dir;
  std::string mix = "10000,35000,35000";
  AssetPaths assets;
  std::string out;
  std::string stats_out;
  std::string report_out;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("assemble", "Mix pools into the training corpus");
    sub->add_option("--pools", pools_dir, "Directory of pool JSONL files")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--mix", mix, "description,complex,simple targets")->capture_default_str();
    sub->add_option("--assets", assets.dir, "Asset directory")->check(CLI::ExistingDirectory);
    sub->add_option("--out", out, "Corpus JSONL")->required();
    sub->add_option("--stats-out", stats_out, "Stats JSON (default: <out>.stats.json)");
    sub->add_option("--report-out", report_out, "Stats report (default: <out>.stats.txt)");
  }

  Pools load_pools(const DescriptionQuestionSet& qset, const SystemMessages& system) const {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(pools_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) fail("EmptyPool", "no .jsonl files under " + pools_dir);
    std::vector<Conversation> conversations;
    for (const auto& f : files) {
      for (const auto& row : io::read_jsonl(f)) {
        if (row.value("kind", std::string()) == "description" && row.contains("text")) {
          conversations.push_back(to_conversation(description_from_json(row), qset));
        } else {
          conversations.push_back(conversation_from_json(row));
        }
      }
    }
    std::sort(conversations.begin(), conversations.end(),
              [](const Conversation& a, const Conversation& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < conversations.size(); ++i) {
      if (conversations[i].id == conversations[i - 1].id) fail("DuplicateId", "pool id " + conversations[i].id);
    }
    Pools pools;
    for (const auto& c : conversations) {
      TrainingExample ex = to_training_example(c, system.for_kind(c.kind));
      switch (c.kind) {
        case ConversationKind::kDescription:
          pools.description.push_back(std::move(ex));
          break;
        case ConversationKind::kComplex:
          pools.complex.push_back(std::move(ex));
          break;
        case ConversationKind::kSimple:
          pools.simple.push_back(std::move(ex));
          break;
      }
    }
    return pools;
  }

  int run(const Globals& g, std::ostream& out_stream, Logger& log) {
    MixSpec spec = MixSpec::parse(mix, g.require_seed("assemble"));
    auto qset = DescriptionQuestionSet::from_file(assets.questions());
    auto system = SystemMessages::from_file(assets.system_messages());
    Pools pools = load_pools(qset, system);
    log.event("assemble", "pools_loaded",
              {{"description", pools.description.size()},
               {"complex", pools.complex.size()},
               {"simple", pools.simple.size()}});
    std::vector<TrainingExample> corpus = assemble_corpus(pools, spec);
    fs::path stats_path = stats_out.empty() ? sibling(out, ".stats.json") : fs::path(stats_out);
    fs::path report_path = report_out.empty() ? sibling(out, ".stats.txt") : fs::path(report_out);
    if (g.dry_run) {
      out_stream << "plan: corpus of " << spec.total() << " (" << spec.description << " description, " << spec.complex
                 << " complex, " << spec.simple << " simple) -> " << out << "\n";
      out_stream << "plan: stats -> " << stats_path.string() << ", " << report_path.string() << "\n";
      return kExitOk;
    }
    io::write_text(out, to_jsonl(corpus));
    CorpusStats stats = corpus_stats(corpus);
    io::write_text(stats_path, stats.to_json().dump(2) + "\n");
    io::write_text(report_path, stats.render());
    log.event("assemble", "corpus_written", {{"examples", corpus.size()}, {"out", out}});
    out_stream << "corpus: " << corpus.size() << " examples -> " << out << "\n";
    return kExitOk;
  }
};

// --- eval ------------------------------------------------------------------

struct EvalCmd {
  CLI::App* build = nullptr;
  CLI::App* run_sub = nullptr;
  CLI::App* grade_sub = nullptr;
  CLI::App* compare_sub = nullptr;

  std::vector<std::string> catalogs;
  std::size_t cap = 50;
  std::string tasks;
  std::string eval_set;
  BackendOptions backend;
  int max_tokens = 64;
  std::string predictions;
  std::string mode = "containment";
  std::vector<std::string> tables;
  std::string layout = "by-task";
  std::string out;
  std::string text_out;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("eval", "Build, run, grade and compare the VQA benchmark");
    sub->require_subcommand(1);

    build = sub->add_subcommand("build", "Build eval items from holdout catalogs");
    build->add_option("--catalog", catalogs, "Holdout catalogs")->required()->check(CLI::ExistingFile);
    build->add_option("--cap", cap, "Items per task")->capture_default_str()->check(CLI::PositiveNumber);
    build->add_option("--tasks", tasks, "Comma-separated task ids (default: all six)");
    build->add_option("--out", out, "Eval set JSONL")->required();

    run_sub = sub->add_subcommand("run", "Query a model on every eval item");
    run_sub->add_option("--eval-set", eval_set, "Eval set JSONL")->required()->check(CLI::ExistingFile);
    backend.add_to(run_sub);
    run_sub->add_option("--max-tokens", max_tokens, "Reply token budget")->capture_default_str();
    run_sub->add_option("--out", out, "Predictions JSONL")->required();

    grade_sub = sub->add_subcommand("grade", "Grade predictions into a group accuracy table");
    grade_sub->add_option("--eval-set", eval_set, "Eval set JSONL")->required()->check(CLI::ExistingFile);
    grade_sub->add_option("--predictions", predictions, "Predictions JSONL")->required()->check(CLI::ExistingFile);
    grade_sub->add_option("--mode", mode, "strict or containment")->capture_default_str()
        ->check(CLI::IsMember({"strict", "containment"}));
    grade_sub->add_option("--out", out, "Accuracy table JSON")->required();
    grade_sub->add_option("--text-out", text_out, "Aligned text table");

    compare_sub = sub->add_subcommand("compare", "Side-by-side accuracy tables");
    compare_sub->add_option("--table", tables, "name=table.json, first is the reference")->required();
    compare_sub->add_option("--layout", layout, "by-task or by-model")->capture_default_str()
        ->check(CLI::IsMember({"by-task", "by-model"}));
    compare_sub->add_option("--out", out, "Comparison JSON");
  }

  int run(const Globals& g, std::ostream& out_stream, Logger& log) {
    if (build->parsed()) return run_build(g, out_stream, log);
    if (run_sub->parsed()) return run_run(g, out_stream, log);
    if (grade_sub->parsed()) return run_grade(g, out_stream, log);
    return run_compare(g, out_stream);
  }

  int run_build(const Globals& g, std::ostream& out_stream, Logger& log) {
    std::uint64_t seed = g.require_seed("eval build");
    std::vector<evals::EvalTask> chosen;
    if (tasks.empty()) {
      chosen = evals::default_tasks();
    } else {
      for (const auto& name : text::split(tasks, ',')) {
        chosen.push_back(evals::task_info(evals::parse_task(text::trim(name))));
      }
    }
    auto items = evals::build_eval_set(read_catalogs(catalogs), chosen, cap, seed);
    std::map<std::string, std::size_t> per_task;
    for (const auto& item : items) ++per_task[std::string(evals::to_string(item.task))];
    if (g.dry_run) {
      out_stream << "plan: " << items.size() << " eval items -> " << out << "\n";
      for (const auto& [task, n] : per_task) out_stream << "plan:   " << task << " " << n << "\n";
      return kExitOk;
    }
    evals::write_eval_set(out, items);
    log.event("eval", "set_built", {{"items", items.size()}});
    for (const auto& [task, n] : per_task) out_stream << task << ": " << n << " items\n";
    return kExitOk;
  }

  int run_run(const Globals& g, std::ostream& out_stream, Logger& log) {
    auto items = evals::read_eval_set(eval_set);
    BackendConfig config = backend.resolve();
    if (g.dry_run) {
      out_stream << "plan: " << items.size() << " queries via " << config.backend_id << " (" << config.model_name
                 << ") -> " << out << "\n";
      return kExitOk;
    }
    auto gateway = backend.connect(config);
    evals::RunOptions options;
    options.max_tokens = max_tokens;
    options.max_in_flight = config.max_in_flight;
    auto preds = evals::run_eval(items, *gateway, options);
    evals::write_predictions(out, preds);
    std::size_t failed = std::count_if(preds.begin(), preds.end(), [](const auto& p) { return p.failed; });
    log.event("eval", "run_done", {{"predictions", preds.size()}, {"failed", failed}});
    out_stream << preds.size() << " predictions, " << failed << " failed (" << gateway_summary(*gateway) << ")\n";
    return kExitOk;
  }

  int run_grade(const Globals& g, std::ostream& out_stream, Logger& log) {
    auto items = evals::read_eval_set(eval_set);
    auto preds = evals::read_predictions(predictions);
    auto results = evals::grade_all(items, preds, evals::parse_grade_mode(mode));
    auto table = evals::aggregate(results);
    out_stream << table.render();
    if (g.dry_run) return kExitOk;
    ordered_json j = table.to_json();
    j["mode"] = mode;
    io::write_text(out, j.dump(2) + "\n");
    if (!text_out.empty()) io::write_text(text_out, table.render());
    log.event("eval", "graded", {{"items", items.size()}, {"mode", mode}});
    return kExitOk;
  }

  int run_compare(const Globals& g, std::ostream& out_stream) {
    std::vector<std::pair<std::string, evals::GroupAccuracyTable>> named;
    for (const auto& spec : tables) {
      auto eq = spec.find('=');
      fs::path path = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
      std::string name = eq == std::string::npos ? path.stem().string() : spec.substr(0, eq);
      named.emplace_back(name, evals::GroupAccuracyTable::from_json(io::read_json(path)));
    }
    auto report = evals::compare(named);
    out_stream << (layout == "by-model" ? report.render_by_model() : report.render_by_task());
    if (!out.empty() && !g.dry_run) io::write_text(out, report.to_json().dump(2) + "\n");
    return kExitOk;
  }
};

// --- serve-expert-eval -----------------------------------------------------

expert_eval::ExpertEvalServer* g_server = nullptr;

extern "C" void stop_server(int) {
  if (g_server) g_server->stop();
}

struct ServeCmd {
  std::string config;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir;
  std::string static_dir;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("serve-expert-eval", "Serve the anonymized A/B preference study");
    sub->add_option("--config", config, "Study config JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--host", host, "Bind address")->capture_default_str();
    sub->add_option("--port", port, "Port (0 picks one)")->capture_default_str()->check(CLI::Range(0, 65535));
    sub->add_option("--data-dir", data_dir, "Session and vote storage")->required();
    sub->add_option("--static-dir", static_dir, "UI bundle directory")->check(CLI::ExistingDirectory);
  }

  int run(const Globals& g, std::ostream& out, Logger& log) {
    auto study = expert_eval::StudyConfig::from_file(config);
    if (g.dry_run) {
      out << "plan: serve " << study.items.size() << " items on " << host << ":" << port << ", data in " << data_dir
          << "\n";
      return kExitOk;
    }
    expert_eval::ExpertEvalStore store(data_dir);
    std::optional<fs::path> statics;
    if (!static_dir.empty()) statics = fs::path(static_dir);
    expert_eval::ExpertEvalServer server(store, study, statics);
    int bound = server.bind(host, port);
    log.event("serve-expert-eval", "listening", {{"host", host}, {"port", bound}});
    out << "listening on http://" << host << ":" << bound << "\n" << std::flush;
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    server.serve();
    g_server = nullptr;
    log.event("serve-expert-eval", "stopped");
    return kExitOk;
  }
};

// --- report ----------------------------------------------------------------

struct ReportCmd {
  CLI::App* sub = nullptr;
  std::string corpus;
  std::size_t top = 20;
  std::string data_dir;
  std::string sessions;
  std::string json_out;

  void add(CLI::App& app) {
    sub = app.add_subcommand("report", "Corpus statistics or expert preference tally");
    sub->add_option("--corpus", corpus, "Corpus JSONL")->check(CLI::ExistingFile);
    sub->add_option("--top", top, "Words listed per speaker")->capture_default_str();
    sub->add_option("--data-dir", data_dir, "Expert eval data directory")->check(CLI::ExistingDirectory);
    sub->add_option("--sessions", sessions, "Comma-separated session ids (default: all)");
    sub->add_option("--json-out", json_out, "Report as JSON");
  }

  int run(const Globals& g, std::ostream& out, Logger&) {
    if (corpus.empty() == data_dir.empty()) fail("UsageError", "report needs exactly one of --corpus or --data-dir");
    ordered_json j;
    if (!corpus.empty()) {
      std::vector<TrainingExample> examples;
      for (const auto& row : io::read_jsonl(corpus)) examples.push_back(example_from_json(row));
      CorpusStats stats = corpus_stats(examples);
      out << stats.render(top);
      j = stats.to_json();
    } else {
      expert_eval::ExpertEvalStore store(data_dir);
      std::vector<std::string> ids;
      for (const auto& id : text::split(sessions, ',')) {
        if (!text::trim(id).empty()) ids.emplace_back(text::trim(id));
      }
      auto table = store.tally(ids);
      out << table.render();
      j = table.to_json();
    }
    if (!json_out.empty() && !g.dry_run) io::write_text(json_out, j.dump(2) + "\n");
    return kExitOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Agricultural instruction-tuning corpus and evaluation toolkit", "agroforge"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "Pipeline config (TOML, one section per subcommand)");

  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_flag("--dry-run", g.dry_run, "Validate inputs and print the plan without writing");
  app.add_flag("--log-json", g.log_json, "Log events as JSON lines");

  IngestCmd ingest;
  KnowledgeCmd knowledge;
  SynthDescCmd synth_desc;
  SynthConvCmd synth_conv;
  SynthSimpleCmd synth_simple;
  AssembleCmd assemble;
  EvalCmd eval;
  ServeCmd serve;
  ReportCmd report;
  ingest.add(app);
  knowledge.add(app);
  synth_desc.add(app);
  synth_conv.add(app);
  synth_simple.add(app);
  assemble.add(app);
  eval.add(app);
  serve.add(app);
  report.add(app);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: UsageError: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  Logger log(err, g.log_json);
  try {
    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (name == "ingest") return ingest.run(g, out, log);
    if (name == "knowledge") return knowledge.run(g, out, log);
    if (name == "synth-desc") return synth_desc.run(g, out, log);
    if (name == "synth-conv") return synth_conv.run(g, out, log);
    if (name == "synth-simple") return synth_simple.run(g, out, log);
    if (name == "assemble") return assemble.run(g, out, log);
    if (name == "eval") return eval.run(g, out, log);
    if (name == "serve-expert-eval") return serve.run(g, out, log);
    return report.run(g, out, log);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == "UsageError" ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: InternalError: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace agroforge::cli
