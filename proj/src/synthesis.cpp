#include "agroforge/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

#include "agroforge/error.hpp"
#include "agroforge/parallel.hpp"
#include "agroforge/rng.hpp"
#include "agroforge/text.hpp"

namespace agroforge {

namespace fs = std::filesystem;

DescriptionQuestionSet::DescriptionQuestionSet(std::vector<std::string> questions, std::string version)
    : questions_(std::move(questions)), version_(std::move(version)) {
  if (questions_.size() != kSize) {
    fail("InvalidAsset", "description question set needs exactly 10 questions, got " +
                             std::to_string(questions_.size()));
  }
  for (const auto& q : questions_) {
    if (text::trim(q).empty()) fail("InvalidAsset", "empty description question");
  }
}

DescriptionQuestionSet DescriptionQuestionSet::from_json(const json& j) {
  try {
    if (j.is_array()) return DescriptionQuestionSet(j.get<std::vector<std::string>>());
    return DescriptionQuestionSet(j.at("questions").get<std::vector<std::string>>(),
                                  j.value("version", std::string()));
  } catch (const json::exception& e) {
    fail("InvalidAsset", e.what());
  }
}

DescriptionQuestionSet DescriptionQuestionSet::from_file(const fs::path& path) {
  return from_json(io::read_json(path));
}

const std::string& DescriptionQuestionSet::at(int index) const {
  if (index < 0 || index >= static_cast<int>(kSize)) {
    fail("InvalidQuestionIndex", "question index " + std::to_string(index) + " outside 0..9");
  }
  return questions_[static_cast<std::size_t>(index)];
}

std::vector<SourceImage> source_images(const DatasetCatalog& catalog) {
  std::vector<SourceImage> out;
  out.reserve(catalog.records.size());
  for (const auto& r : catalog.records) {
    out.push_back({r, catalog.domain, catalog.image_path(r).string()});
  }
  return out;
}

ordered_json to_json(const Description& d) {
  ordered_json j;
  j["id"] = d.id;
  j["image_id"] = d.image_id;
  j["domain"] = std::string(to_string(d.domain));
  j["kind"] = "description";
  j["text"] = d.text;
  j["generator_model"] = d.generator_model;
  j["question_index"] = d.question_index;
  return j;
}

Description description_from_json(const json& j) {
  try {
    Description d;
    d.id = j.at("id").get<std::string>();
    d.image_id = j.at("image_id").get<std::string>();
    d.domain = parse_domain(j.at("domain").get<std::string>());
    if (j.value("kind", std::string("description")) != "description") {
      fail("InvalidConversation", d.id + ": not a description row");
    }
    d.text = j.at("text").get<std::string>();
    d.generator_model = j.value("generator_model", std::string());
    d.question_index = j.at("question_index").get<int>();
    return d;
  } catch (const json::exception& e) {
    fail("InvalidConversation", e.what());
  }
}

std::vector<Description> read_descriptions(const fs::path& path) {
  std::vector<Description> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(description_from_json(row));
  return out;
}

void write_descriptions(const fs::path& path, const std::vector<Description>& descriptions) {
  std::vector<std::string> lines;
  lines.reserve(descriptions.size());
  for (const auto& d : descriptions) lines.push_back(to_json(d).dump());
  io::write_lines(path, lines);
}

Conversation to_conversation(const Description& d, const DescriptionQuestionSet& qset) {
  Conversation c;
  c.id = d.id;
  c.image_id = d.image_id;
  c.domain = d.domain;
  c.kind = ConversationKind::kDescription;
  c.turns.push_back({qset.at(d.question_index), d.text});
  c.generator_model = d.generator_model;
  c.question_index = d.question_index;
  return c;
}

PromptBank PromptBank::from_json(const json& j) {
  try {
    PromptBank p;
    p.description_system = j.at("description").get<std::string>();
    for (const auto& [domain, prompt] : j.at("conversation").items()) {
      p.conversation_system[parse_domain(domain)] = prompt.get<std::string>();
    }
    return p;
  } catch (const json::exception& e) {
    fail("InvalidAsset", e.what());
  }
}

PromptBank PromptBank::from_file(const fs::path& path) { return from_json(io::read_json(path)); }

const std::string& PromptBank::conversation_prompt(Domain domain) const {
  auto it = conversation_system.find(domain);
  if (it == conversation_system.end() || text::trim(it->second).empty()) {
    fail("MissingDomainAssets", "no system prompt for domain " + std::string(to_string(domain)));
  }
  return it->second;
}

ExampleBank ExampleBank::from_json(const json& j) {
  try {
    ExampleBank bank;
    for (const auto& [domain_name, list] : j.items()) {
      Domain domain = parse_domain(domain_name);
      std::vector<InContextExample> examples;
      for (const auto& ej : list) {
        InContextExample ex;
        for (const auto& [k, v] : ej.at("attributes").items()) ex.attributes[k] = v.get<std::string>();
        ex.description = ej.at("description").get<std::string>();
        ex.knowledge = ej.at("knowledge").get<std::string>();
        for (const auto& t : ej.at("turns")) {
          ex.turns.push_back({t.at("question").get<std::string>(), t.at("answer").get<std::string>()});
        }
        if (ex.turns.empty()) fail("InvalidAsset", "in-context example without turns for " + domain_name);
        examples.push_back(std::move(ex));
      }
      if (examples.size() < 2) {
        fail("InvalidAsset", "domain " + domain_name + " needs at least 2 in-context examples");
      }
      bank.by_domain[domain] = std::move(examples);
    }
    return bank;
  } catch (const json::exception& e) {
    fail("InvalidAsset", e.what());
  }
}

ExampleBank ExampleBank::from_file(const fs::path& path) { return from_json(io::read_json(path)); }

const std::vector<InContextExample>& ExampleBank::for_domain(Domain domain) const {
  auto it = by_domain.find(domain);
  if (it == by_domain.end() || it->second.empty()) {
    fail("MissingDomainAssets", "no in-context examples for domain " + std::string(to_string(domain)));
  }
  return it->second;
}

namespace {

std::string attribute_lines(const AttributeMap& attributes) {
  std::string out;
  for (const auto& [k, v] : attributes) out += "- " + k + ": " + v + "\n";
  return out;
}

}  // namespace

ChatRequest build_description_prompt(const SourceImage& image, int question_index,
                                     const DescriptionQuestionSet& qset, const PromptBank& prompts,
                                     const DescriptionOptions& options) {
  const std::string& question = qset.at(question_index);
  std::string user = "This image comes from an agricultural " + std::string(to_string(image.domain)) +
                     " dataset.\nKnown attributes of the image:\n" + attribute_lines(image.record.attributes) +
                     "Treat these attributes as correct when you describe the image.\n\n" + question;
  ChatRequest r;
  r.temperature = options.temperature;
  r.max_tokens = options.max_tokens;
  if (!prompts.description_system.empty()) r.messages.push_back({Role::kSystem, prompts.description_system, {}});
  r.messages.push_back({Role::kUser, std::move(user), image.image_path});
  return r;
}

std::vector<int> sample_question_indices(std::string_view image_id, std::uint64_t seed, int count) {
  if (count < 1 || count > static_cast<int>(DescriptionQuestionSet::kSize)) {
    fail("InvalidQuestionIndex", "questions per image must be within 1..10");
  }
  Rng rng = Rng::derived(seed, std::string("describe/") + std::string(image_id));
  std::vector<int> out;
  for (std::size_t i : rng.sample_indices(DescriptionQuestionSet::kSize, static_cast<std::size_t>(count))) {
    out.push_back(static_cast<int>(i));
  }
  return out;
}

DescriptionRun generate_descriptions(std::span<const SourceImage> images, const DescriptionQuestionSet& qset,
                                     Gateway& gateway, const PromptBank& prompts, std::uint64_t seed,
                                     const DescriptionOptions& options) {
  struct Job {
    std::size_t image;
    int question;
  };
  std::vector<Job> pending;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (int q : sample_question_indices(images[i].record.id, seed, options.per_record)) pending.push_back({i, q});
  }
  const std::string model =
      gateway.config().model_name.empty() ? gateway.config().backend_id : gateway.config().model_name;

  DescriptionRun run;
  for (int attempt = 0; attempt < std::max(options.max_attempts, 1) && !pending.empty(); ++attempt) {
    std::vector<ChatRequest> requests;
    requests.reserve(pending.size());
    for (const auto& job : pending) {
      ChatRequest r = build_description_prompt(images[job.image], job.question, qset, prompts, options);
      r.sampling_seed = Rng::derive_seed(seed, images[job.image].record.id + "/q" + std::to_string(job.question)) +
                        static_cast<std::uint64_t>(attempt);
      requests.push_back(std::move(r));
    }
    auto outcomes = gateway.chat_batch(requests, options.max_in_flight);
    std::vector<Job> retry;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      const SourceImage& img = images[pending[k].image];
      if (!outcomes[k].ok()) {
        run.failures.push_back({img.record.id, outcomes[k].error_code, outcomes[k].error_message});
        continue;
      }
      std::string body(text::trim(outcomes[k].response->text));
      if (body.empty()) {
        retry.push_back(pending[k]);
        continue;
      }
      Description d;
      d.id = "description/" + img.record.id + "/q" + std::to_string(pending[k].question);
      d.image_id = img.record.id;
      d.domain = img.domain;
      d.question_index = pending[k].question;
      d.text = std::move(body);
      d.generator_model = model;
      run.descriptions.push_back(std::move(d));
    }
    pending = std::move(retry);
  }
  for (const auto& job : pending) {
    run.failures.push_back({images[job.image].record.id, "EmptyResponse",
                            "empty description after " + std::to_string(options.max_attempts) + " attempt(s)"});
  }
  std::sort(run.descriptions.begin(), run.descriptions.end(), [](const Description& a, const Description& b) {
    return std::tie(a.image_id, a.question_index) < std::tie(b.image_id, b.question_index);
  });
  std::sort(run.failures.begin(), run.failures.end(),
            [](const GenerationFailure& a, const GenerationFailure& b) { return a.image_id < b.image_id; });
  return run;
}

const Description* choose_description(std::span<const Description* const> candidates, std::uint64_t seed) {
  if (candidates.empty()) return nullptr;
  std::vector<const Description*> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const Description* a, const Description* b) { return a->question_index < b->question_index; });
  Rng rng = Rng::derived(seed, "context/" + sorted.front()->image_id);
  return sorted[static_cast<std::size_t>(rng.below(sorted.size()))];
}

std::string knowledge_excerpt(std::string_view body, std::size_t max_bytes) {
  body = text::trim(body);
  if (body.size() <= max_bytes) return std::string(body);
  std::size_t cut = 0;
  for (std::size_t i = 0; i < max_bytes; ++i) {
    char c = body[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (i + 1 == body.size() || std::isspace(static_cast<unsigned char>(body[i + 1]))) cut = i + 1;
  }
  if (cut == 0) return std::string(text::utf8_prefix(body, max_bytes));
  return std::string(body.substr(0, cut));
}

GenerationContext assemble_context(const SourceImage& image, std::string_view description,
                                   const KnowledgeBase& kb, const ExampleBank& examples,
                                   const PromptBank& prompts, std::size_t excerpt_bytes) {
  GenerationContext ctx;
  ctx.image_id = image.record.id;
  ctx.domain = image.domain;
  ctx.attributes = image.record.attributes;
  ctx.system_prompt = prompts.conversation_prompt(image.domain);
  ctx.in_context_examples = examples.for_domain(image.domain);
  ctx.knowledge_excerpt = knowledge_excerpt(kb.lookup(image.domain, image.record.class_label).body, excerpt_bytes);
  ctx.description = std::string(text::trim(description));
  if (ctx.description.empty()) fail("MissingDescription", "no description for " + image.record.id);
  return ctx;
}

std::string render_context_message(Domain domain, const AttributeMap& attributes, std::string_view description,
                                   std::string_view knowledge) {
  std::string out = "Domain: " + std::string(to_string(domain)) + "\n\nImage attributes:\n" +
                    attribute_lines(attributes) + "\nImage description:\n" + std::string(description) +
                    "\n\nBackground information:\n" + std::string(knowledge) +
                    "\n\nWrite a conversation of 3 to 5 rounds about this image. Put each question on a line "
                    "starting with \"Question:\" and each answer on a line starting with \"Answer:\".";
  return out;
}

ChatRequest build_conversation_request(const GenerationContext& ctx, const ConversationOptions& options,
                                       int attempt) {
  ChatRequest r;
  r.temperature = options.temperature;
  r.max_tokens = options.max_tokens;
  r.sampling_seed = Rng::derive_seed(options.seed, "converse/" + ctx.image_id) + static_cast<std::uint64_t>(attempt);
  r.messages.push_back({Role::kSystem, ctx.system_prompt, {}});
  for (const auto& ex : ctx.in_context_examples) {
    r.messages.push_back({Role::kUser, render_context_message(ctx.domain, ex.attributes, ex.description, ex.knowledge), {}});
    r.messages.push_back({Role::kAssistant, serialize_conversation(ex.turns), {}});
  }
  r.messages.push_back(
      {Role::kUser, render_context_message(ctx.domain, ctx.attributes, ctx.description, ctx.knowledge_excerpt), {}});
  return r;
}

std::vector<QATurn> parse_llm_conversation(std::string_view raw) {
  static const std::regex kMarker(R"(^[ \t]*(question|answer)(?:[ \t]+\d+)?[ \t]*:)", std::regex::icase);
  struct Block {
    bool is_question;
    std::string payload;
  };
  std::vector<Block> blocks;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t eol = raw.find('\n', pos);
    std::string line(raw.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (std::regex_search(line, m, kMarker)) {
      bool q = std::tolower(static_cast<unsigned char>(m[1].str()[0])) == 'q';
      blocks.push_back({q, line.substr(static_cast<std::size_t>(m.length(0)))});
    } else if (!blocks.empty()) {
      blocks.back().payload += "\n" + line;
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  if (blocks.empty()) fail("ParseError", "no Question:/Answer: markers found");
  if (blocks.size() % 2 != 0) fail("ParseError", "unpaired question/answer markers");
  std::vector<QATurn> turns;
  for (std::size_t i = 0; i < blocks.size(); i += 2) {
    if (!blocks[i].is_question || blocks[i + 1].is_question) {
      fail("ParseError", "markers do not alternate Question, Answer at turn " + std::to_string(i / 2 + 1));
    }
    QATurn t{std::string(text::trim(blocks[i].payload)), std::string(text::trim(blocks[i + 1].payload))};
    if (t.question.empty() || t.answer.empty()) {
      fail("ParseError", "empty payload at turn " + std::to_string(i / 2 + 1));
    }
    turns.push_back(std::move(t));
  }
  return turns;
}

std::string serialize_conversation(std::span<const QATurn> turns) {
  std::string out;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (i > 0) out += "\n";
    out += "Question: " + turns[i].question + "\nAnswer: " + turns[i].answer;
  }
  return out;
}

const std::vector<std::string>& default_refusal_blocklist() {
  static const std::vector<std::string> kList = {
      "as an ai",          "i'm sorry",          "i am sorry",        "i cannot",
      "i can't",           "i am unable",        "i'm unable",        "unable to determine",
      "cannot determine",  "not able to see",    "i do not have access"};
  return kList;
}

bool ValidationReport::has(std::string_view problem) const {
  return std::find(problems.begin(), problems.end(), problem) != problems.end();
}

ValidationReport validate_conversation(std::span<const QATurn> turns, const AttributeMap& attributes,
                                       std::span<const std::string> refusal_blocklist) {
  ValidationReport report;
  if (turns.size() < 3 || turns.size() > 5) report.problems.emplace_back("turn_count");
  std::string answers;
  bool empty_turn = false;
  for (const auto& t : turns) {
    if (text::trim(t.question).empty() || text::trim(t.answer).empty()) empty_turn = true;
    answers += " " + text::normalize_key(t.answer);
  }
  if (empty_turn) report.problems.emplace_back("empty_turn");

  bool grounded = false;
  for (std::string_view key : attr::kIdentifying) {
    auto it = attributes.find(key);
    if (it == attributes.end()) continue;
    std::string value = text::normalize_key(it->second);
    if (!value.empty() && text::contains(answers, value)) grounded = true;
  }
  if (!grounded) report.problems.emplace_back("grounding");

  std::span<const std::string> blocklist =
      refusal_blocklist.empty() ? std::span<const std::string>(default_refusal_blocklist()) : refusal_blocklist;
  for (const auto& phrase : blocklist) {
    if (text::contains(answers, text::normalize_key(phrase))) {
      report.problems.emplace_back("refusal");
      break;
    }
  }
  return report;
}

Conversation generate_conversation(const GenerationContext& ctx, Gateway& gateway, const ConversationOptions& options) {
  std::string last_problem = "no attempts";
  for (int attempt = 0; attempt < std::max(options.max_attempts, 1); ++attempt) {
    ChatResponse resp = gateway.chat(build_conversation_request(ctx, options, attempt));
    std::vector<QATurn> turns;
    try {
      turns = parse_llm_conversation(resp.text);
    } catch (const Error& e) {
      last_problem = e.what();
      continue;
    }
    ValidationReport report = validate_conversation(turns, ctx.attributes, options.refusal_blocklist);
    if (!report.valid()) {
      last_problem = "invalid: " + text::join(report.problems, ",");
      continue;
    }
    Conversation c;
    c.id = "complex/" + ctx.image_id;
    c.image_id = ctx.image_id;
    c.domain = ctx.domain;
    c.kind = ConversationKind::kComplex;
    c.turns = std::move(turns);
    c.generator_model = gateway.config().model_name.empty() ? gateway.config().backend_id : gateway.config().model_name;
    return c;
  }
  fail("GenerationRejected", ctx.image_id + ": " + std::to_string(options.max_attempts) +
                                 " attempt(s) rejected; last " + last_problem);
}

ConversationRun generate_conversations(std::span<const GenerationContext> contexts, Gateway& gateway,
                                       const ConversationOptions& options, int max_in_flight) {
  std::vector<std::optional<Conversation>> slots(contexts.size());
  std::vector<std::optional<GenerationFailure>> failures(contexts.size());
  parallel_for(contexts.size(), max_in_flight, [&](std::size_t i) {
    try {
      slots[i] = generate_conversation(contexts[i], gateway, options);
    } catch (const Error& e) {
      failures[i] = GenerationFailure{contexts[i].image_id, e.code(), e.message()};
    }
  });
  ConversationRun run;
  for (auto& s : slots) {
    if (s) run.conversations.push_back(std::move(*s));
  }
  for (auto& f : failures) {
    if (f) run.failures.push_back(std::move(*f));
  }
  std::sort(run.conversations.begin(), run.conversations.end(),
            [](const Conversation& a, const Conversation& b) { return a.image_id < b.image_id; });
  std::sort(run.failures.begin(), run.failures.end(),
            [](const GenerationFailure& a, const GenerationFailure& b) { return a.image_id < b.image_id; });
  return run;
}

}  // namespace agroforge
