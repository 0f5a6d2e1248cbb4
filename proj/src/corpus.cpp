#include "agroforge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "agroforge/error.hpp"
#include "agroforge/rng.hpp"
#include "agroforge/text.hpp"

namespace agroforge {

namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

}  // namespace

void TrainingExample::validate(std::string_view placeholder) const {
  if (sequence.empty()) fail("InvalidExample", id + ": empty sequence");
  if (sequence.size() % 2 != 0) fail("InvalidExample", id + ": sequence must end with an assistant turn");
  std::size_t placeholders = 0;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    Speaker expected = i % 2 == 0 ? Speaker::kHuman : Speaker::kAssistant;
    if (sequence[i].speaker != expected) fail("InvalidExample", id + ": speakers do not alternate");
    placeholders += count_occurrences(sequence[i].text, placeholder);
  }
  if (placeholders != 1 || sequence.front().text.rfind(placeholder, 0) != 0) {
    fail("InvalidExample", id + ": placeholder must appear once, at the start of the first human turn");
  }
}

TrainingExample to_training_example(const Conversation& c, std::string_view system_message,
                                    std::string_view placeholder) {
  if (c.turns.empty()) fail("EmptyConversation", c.id + ": no turns");
  TrainingExample ex;
  ex.id = c.id;
  ex.image = c.image_id;
  ex.kind = c.kind;
  ex.domain = c.domain;
  ex.system_message = std::string(system_message);
  for (std::size_t i = 0; i < c.turns.size(); ++i) {
    std::string question = c.turns[i].question;
    if (i == 0) question = std::string(placeholder) + "\n" + question;
    ex.sequence.push_back({Speaker::kHuman, std::move(question)});
    ex.sequence.push_back({Speaker::kAssistant, c.turns[i].answer});
  }
  ex.validate(placeholder);
  return ex;
}

ordered_json to_json(const TrainingExample& ex) {
  ordered_json j;
  j["id"] = ex.id;
  j["image"] = ex.image;
  j["kind"] = std::string(to_string(ex.kind));
  j["domain"] = std::string(to_string(ex.domain));
  j["system"] = ex.system_message;
  ordered_json turns = ordered_json::array();
  for (const auto& t : ex.sequence) {
    ordered_json tj;
    tj["from"] = t.speaker == Speaker::kHuman ? "human" : "gpt";
    tj["value"] = t.text;
    turns.push_back(std::move(tj));
  }
  j["conversations"] = std::move(turns);
  return j;
}

TrainingExample example_from_json(const json& j) {
  try {
    TrainingExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.image = j.at("image").get<std::string>();
    ex.kind = parse_kind(j.at("kind").get<std::string>());
    ex.domain = parse_domain(j.at("domain").get<std::string>());
    ex.system_message = j.value("system", std::string());
    for (const auto& t : j.at("conversations")) {
      std::string from = t.at("from").get<std::string>();
      if (from != "human" && from != "gpt") fail("InvalidExample", ex.id + ": unknown speaker " + from);
      ex.sequence.push_back({from == "human" ? Speaker::kHuman : Speaker::kAssistant, t.at("value").get<std::string>()});
    }
    return ex;
  } catch (const json::exception& e) {
    fail("InvalidExample", e.what());
  }
}

std::string to_jsonl(const std::vector<TrainingExample>& corpus) {
  std::string out;
  for (const auto& ex : corpus) {
    out += to_json(ex).dump();
    out += '\n';
  }
  return out;
}

SystemMessages SystemMessages::from_json(const json& j) {
  try {
    SystemMessages m;
    for (const auto& [kind, message] : j.items()) m.by_kind[parse_kind(kind)] = message.get<std::string>();
    for (auto kind : {ConversationKind::kDescription, ConversationKind::kComplex, ConversationKind::kSimple}) {
      if (!m.by_kind.count(kind)) fail("InvalidAsset", "no system message for kind " + std::string(to_string(kind)));
    }
    return m;
  } catch (const json::exception& e) {
    fail("InvalidAsset", e.what());
  }
}

SystemMessages SystemMessages::from_file(const std::filesystem::path& path) {
  return from_json(io::read_json(path));
}

const std::string& SystemMessages::for_kind(ConversationKind kind) const {
  auto it = by_kind.find(kind);
  if (it == by_kind.end()) fail("InvalidAsset", "no system message for kind " + std::string(to_string(kind)));
  return it->second;
}

MixSpec MixSpec::parse(std::string_view counts, std::uint64_t seed) {
  auto parts = text::split(counts, ',');
  if (parts.size() != 3) fail("UsageError", "mix must be three comma-separated counts: description,complex,simple");
  MixSpec mix;
  std::size_t* slots[] = {&mix.description, &mix.complex, &mix.simple};
  for (std::size_t i = 0; i < 3; ++i) {
    std::string p(text::trim(parts[i]));
    if (p.empty() || !std::all_of(p.begin(), p.end(), [](unsigned char c) { return std::isdigit(c); })) {
      fail("UsageError", "mix count '" + p + "' is not a non-negative integer");
    }
    *slots[i] = static_cast<std::size_t>(std::stoull(p));
  }
  mix.seed = seed;
  return mix;
}

std::vector<TrainingExample> assemble_corpus(const Pools& pools, const MixSpec& mix) {
  struct Part {
    ConversationKind kind;
    const std::vector<TrainingExample>* pool;
    std::size_t target;
  };
  const Part parts[] = {{ConversationKind::kDescription, &pools.description, mix.description},
                        {ConversationKind::kComplex, &pools.complex, mix.complex},
                        {ConversationKind::kSimple, &pools.simple, mix.simple}};
  for (const auto& p : parts) {
    if (p.pool->size() < p.target) {
      fail("InsufficientPool", std::string(to_string(p.kind)) + " pool has " + std::to_string(p.pool->size()) +
                                   " examples, target " + std::to_string(p.target) +
                                   ", shortfall " + std::to_string(p.target - p.pool->size()));
    }
  }
  std::vector<TrainingExample> corpus;
  corpus.reserve(mix.total());
  for (const auto& p : parts) {
    Rng rng = Rng::derived(mix.seed, "mix/" + std::string(to_string(p.kind)));
    for (std::size_t idx : rng.sample_indices(p.pool->size(), p.target)) corpus.push_back((*p.pool)[idx]);
  }
  Rng order = Rng::derived(mix.seed, "mix/order");
  order.shuffle(corpus);
  return corpus;
}

std::vector<std::string> tokenize_words(std::string_view input, std::string_view placeholder) {
  std::string cleaned(input);
  if (!placeholder.empty()) {
    for (std::size_t pos = cleaned.find(placeholder); pos != std::string::npos; pos = cleaned.find(placeholder, pos)) {
      cleaned.replace(pos, placeholder.size(), " ");
    }
  }
  for (char& c : cleaned) {
    auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) c = ' ';
  }
  return text::split_whitespace(text::to_lower(cleaned));
}

CorpusStats corpus_stats(const std::vector<TrainingExample>& corpus, std::string_view placeholder) {
  CorpusStats s;
  s.total = corpus.size();
  for (const auto& ex : corpus) {
    ++s.by_kind[std::string(to_string(ex.kind))];
    ++s.by_domain[std::string(to_string(ex.domain))];
    ++s.by_dataset[ex.image.substr(0, ex.image.find('/'))];
    ++s.rounds_histogram[ex.sequence.size() / 2];
    for (const auto& t : ex.sequence) {
      auto& table = t.speaker == Speaker::kHuman ? s.human_words : s.assistant_words;
      for (auto& w : tokenize_words(t.text, placeholder)) ++table[w];
    }
  }
  return s;
}

namespace {

std::vector<std::pair<std::string, std::size_t>> top(const std::map<std::string, std::size_t>& words, std::size_t n) {
  std::vector<std::pair<std::string, std::size_t>> v(words.begin(), words.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (v.size() > n) v.resize(n);
  return v;
}

}  // namespace

ordered_json CorpusStats::to_json() const {
  ordered_json j;
  j["total"] = total;
  j["by_kind"] = by_kind;
  j["by_domain"] = by_domain;
  j["by_dataset"] = by_dataset;
  ordered_json hist = ordered_json::object();
  for (const auto& [rounds, n] : rounds_histogram) hist[std::to_string(rounds)] = n;
  j["rounds_histogram"] = std::move(hist);
  j["human_words"] = human_words;
  j["assistant_words"] = assistant_words;
  return j;
}

std::string CorpusStats::render(std::size_t top_words) const {
  std::ostringstream out;
  char buf[160];
  out << "examples: " << total << "\n\nby kind\n";
  for (const auto& [k, n] : by_kind) {
    std::snprintf(buf, sizeof(buf), "  %-12s %8zu\n", k.c_str(), n);
    out << buf;
  }
  out << "\nby domain\n";
  for (const auto& [k, n] : by_domain) {
    std::snprintf(buf, sizeof(buf), "  %-12s %8zu\n", k.c_str(), n);
    out << buf;
  }
  out << "\nby dataset\n";
  for (const auto& [k, n] : by_dataset) {
    std::snprintf(buf, sizeof(buf), "  %-24s %8zu\n", k.c_str(), n);
    out << buf;
  }
  out << "\nrounds per example\n";
  for (const auto& [rounds, n] : rounds_histogram) {
    std::snprintf(buf, sizeof(buf), "  %-4zu %8zu\n", rounds, n);
    out << buf;
  }
  out << "\ntop question words\n";
  for (const auto& [w, n] : top(human_words, top_words)) {
    std::snprintf(buf, sizeof(buf), "  %-20s %8zu\n", w.c_str(), n);
    out << buf;
  }
  out << "\ntop answer words\n";
  for (const auto& [w, n] : top(assistant_words, top_words)) {
    std::snprintf(buf, sizeof(buf), "  %-20s %8zu\n", w.c_str(), n);
    out << buf;
  }
  return out.str();
}

}  // namespace agroforge
