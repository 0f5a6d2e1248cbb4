#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "agroforge/conversation.hpp"
#include "agroforge/json_io.hpp"

namespace agroforge {

inline constexpr std::string_view kDefaultPlaceholder = "<image>";

enum class Speaker { kHuman, kAssistant };

struct SequenceTurn {
  Speaker speaker = Speaker::kHuman;
  std::string text;

  bool operator==(const SequenceTurn&) const = default;
};

struct TrainingExample {
  std::string id;
  std::string image;
  ConversationKind kind = ConversationKind::kComplex;
  Domain domain = Domain::kDisease;
  std::string system_message;
  std::vector<SequenceTurn> sequence;

  // Throws Error("InvalidExample"): speakers must alternate starting with
  // human, and the placeholder must occur exactly once, at the start of the
  // first human turn.
  void validate(std::string_view placeholder = kDefaultPlaceholder) const;
};

// Errors: EmptyConversation.
TrainingExample to_training_example(const Conversation& conversation, std::string_view system_message,
                                    std::string_view placeholder = kDefaultPlaceholder);

// Corpus line, keys in this order:
// {"id","image","kind","domain","system","conversations":[{"from":"human"|"gpt","value"}]}
ordered_json to_json(const TrainingExample& example);
TrainingExample example_from_json(const json& j);
std::string to_jsonl(const std::vector<TrainingExample>& corpus);

// System message per conversation kind. Asset JSON:
// {"description": "...", "complex": "...", "simple": "..."}
struct SystemMessages {
  std::map<ConversationKind, std::string> by_kind;

  static SystemMessages from_json(const json& j);
  static SystemMessages from_file(const std::filesystem::path& path);
  const std::string& for_kind(ConversationKind kind) const;
};

struct MixSpec {
  std::size_t description = 0;
  std::size_t complex = 0;
  std::size_t simple = 0;
  std::uint64_t seed = 0;

  std::size_t total() const { return description + complex + simple; }
  // "10000,35000,35000" -> counts. Throws Error("UsageError").
  static MixSpec parse(std::string_view counts, std::uint64_t seed);
};

struct Pools {
  std::vector<TrainingExample> description;
  std::vector<TrainingExample> complex;
  std::vector<TrainingExample> simple;
};

// Samples exactly the target count per kind without replacement, then
// shuffles the union. Errors: InsufficientPool.
std::vector<TrainingExample> assemble_corpus(const Pools& pools, const MixSpec& mix);

struct CorpusStats {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_kind;
  std::map<std::string, std::size_t> by_domain;
  std::map<std::string, std::size_t> by_dataset;
  std::map<std::size_t, std::size_t> rounds_histogram;  // QA rounds -> examples
  std::map<std::string, std::size_t> human_words;
  std::map<std::string, std::size_t> assistant_words;

  ordered_json to_json() const;
  std::string render(std::size_t top_words = 20) const;
};

// Words: lowercased, punctuation stripped, placeholder removed.
std::vector<std::string> tokenize_words(std::string_view text, std::string_view placeholder = kDefaultPlaceholder);

CorpusStats corpus_stats(const std::vector<TrainingExample>& corpus,
                         std::string_view placeholder = kDefaultPlaceholder);

}  // namespace agroforge
