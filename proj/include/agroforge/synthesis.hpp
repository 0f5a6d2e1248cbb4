#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agroforge/conversation.hpp"
#include "agroforge/gateway.hpp"
#include "agroforge/ingest.hpp"
#include "agroforge/knowledge.hpp"

namespace agroforge {

// The fixed set of ten description questions.
class DescriptionQuestionSet {
 public:
  static constexpr std::size_t kSize = 10;

  // Throws Error("InvalidAsset") unless there are exactly ten non-empty questions.
  explicit DescriptionQuestionSet(std::vector<std::string> questions, std::string version = "");
  static DescriptionQuestionSet from_json(const json& j);
  static DescriptionQuestionSet from_file(const std::filesystem::path& path);

  // Throws Error("InvalidQuestionIndex") outside 0..9.
  const std::string& at(int index) const;
  const std::vector<std::string>& questions() const { return questions_; }
  const std::string& version() const { return version_; }

 private:
  std::vector<std::string> questions_;
  std::string version_;
};

// An image the pipeline generates for, resolved against its catalog.
struct SourceImage {
  ImageRecord record;
  Domain domain = Domain::kDisease;
  std::string image_path;
};

std::vector<SourceImage> source_images(const DatasetCatalog& catalog);

struct Description {
  std::string id;
  std::string image_id;
  Domain domain = Domain::kDisease;
  int question_index = 0;
  std::string text;
  std::string generator_model;
};

ordered_json to_json(const Description& d);
Description description_from_json(const json& j);
std::vector<Description> read_descriptions(const std::filesystem::path& path);
void write_descriptions(const std::filesystem::path& path, const std::vector<Description>& descriptions);

// Single-turn conversation: the selected question and the description.
Conversation to_conversation(const Description& d, const DescriptionQuestionSet& qset);

// System prompts: one for the vision-language description step and one per
// domain for conversation synthesis. Asset JSON:
// {"description": "...", "conversation": {"disease": "...", ...}}
struct PromptBank {
  std::string description_system;
  std::map<Domain, std::string> conversation_system;

  static PromptBank from_json(const json& j);
  static PromptBank from_file(const std::filesystem::path& path);
  // Throws Error("MissingDomainAssets").
  const std::string& conversation_prompt(Domain domain) const;
};

struct InContextExample {
  AttributeMap attributes;
  std::string description;
  std::string knowledge;
  std::vector<QATurn> turns;
};

// Asset JSON: {"<domain>": [{attributes, description, knowledge, turns}, ...]}.
// Each listed domain needs at least two examples.
struct ExampleBank {
  std::map<Domain, std::vector<InContextExample>> by_domain;

  static ExampleBank from_json(const json& j);
  static ExampleBank from_file(const std::filesystem::path& path);
  // Throws Error("MissingDomainAssets").
  const std::vector<InContextExample>& for_domain(Domain domain) const;
};

struct DescriptionOptions {
  double temperature = 0.2;
  int max_tokens = 512;
  int per_record = 1;  // distinct questions per image, 1..10
  int max_attempts = 3;  // for empty replies
  int max_in_flight = 4;
};

ChatRequest build_description_prompt(const SourceImage& image, int question_index,
                                     const DescriptionQuestionSet& qset,
                                     const PromptBank& prompts,
                                     const DescriptionOptions& options = {});

// Question indices drawn for one image, in draw order.
std::vector<int> sample_question_indices(std::string_view image_id, std::uint64_t seed, int count);

struct GenerationFailure {
  std::string image_id;
  std::string error_code;
  std::string message;
};

struct DescriptionRun {
  std::vector<Description> descriptions;  // sorted by (image_id, question_index)
  std::vector<GenerationFailure> failures;
};

DescriptionRun generate_descriptions(std::span<const SourceImage> images,
                                     const DescriptionQuestionSet& qset, Gateway& gateway,
                                     const PromptBank& prompts, std::uint64_t seed,
                                     const DescriptionOptions& options = {});

// One description per image, chosen seed-deterministically among those
// generated for it. Returns nullptr when none exists.
const Description* choose_description(std::span<const Description* const> candidates,
                                      std::uint64_t seed);

struct GenerationContext {
  std::string image_id;
  Domain domain = Domain::kDisease;
  AttributeMap attributes;
  std::string description;
  std::string knowledge_excerpt;
  std::vector<InContextExample> in_context_examples;
  std::string system_prompt;
};

inline constexpr std::size_t kDefaultExcerptChars = 2000;

// Longest prefix of at most max_bytes ending at a sentence boundary
// ('.', '!' or '?' followed by whitespace or end of text). A body that fits
// is returned whole; a body with no boundary inside the limit is cut at the
// limit on a UTF-8 character boundary.
std::string knowledge_excerpt(std::string_view body, std::size_t max_bytes = kDefaultExcerptChars);

// Errors: KnowledgeMissing, MissingDomainAssets.
GenerationContext assemble_context(const SourceImage& image, std::string_view description,
                                   const KnowledgeBase& kb, const ExampleBank& examples,
                                   const PromptBank& prompts,
                                   std::size_t excerpt_bytes = kDefaultExcerptChars);

std::string render_context_message(Domain domain, const AttributeMap& attributes,
                                   std::string_view description, std::string_view knowledge);

struct ConversationOptions {
  int max_attempts = 3;
  double temperature = 0.7;
  int max_tokens = 1024;
  std::uint64_t seed = 0;
  std::vector<std::string> refusal_blocklist;  // empty: default list
};

ChatRequest build_conversation_request(const GenerationContext& context, const ConversationOptions& options,
                                       int attempt);

// Line-anchored "Question:" / "Answer:" markers, case-insensitive, with
// optional numbering ("Question 2:"). Text before the first marker is
// ignored. Throws Error("ParseError").
std::vector<QATurn> parse_llm_conversation(std::string_view raw);
std::string serialize_conversation(std::span<const QATurn> turns);

const std::vector<std::string>& default_refusal_blocklist();

struct ValidationReport {
  std::vector<std::string> problems;  // "turn_count", "grounding", "refusal", "empty_turn"

  bool valid() const { return problems.empty(); }
  bool has(std::string_view problem) const;
};

ValidationReport validate_conversation(std::span<const QATurn> turns, const AttributeMap& attributes,
                                       std::span<const std::string> refusal_blocklist = {});

// Errors: GenerationRejected after max_attempts invalid replies; gateway
// errors pass through.
Conversation generate_conversation(const GenerationContext& context, Gateway& gateway,
                                   const ConversationOptions& options = {});

struct ConversationRun {
  std::vector<Conversation> conversations;  // sorted by image_id
  std::vector<GenerationFailure> failures;
};

ConversationRun generate_conversations(std::span<const GenerationContext> contexts, Gateway& gateway,
                                       const ConversationOptions& options, int max_in_flight);

}  // namespace agroforge
