#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "agroforge/ingest.hpp"
#include "agroforge/json_io.hpp"

namespace agroforge {

enum class ConversationKind { kDescription, kComplex, kSimple };

std::string_view to_string(ConversationKind kind);
ConversationKind parse_kind(std::string_view name);

struct QATurn {
  std::string question;
  std::string answer;

  bool operator==(const QATurn&) const = default;
};

struct Conversation {
  std::string id;
  std::string image_id;
  Domain domain = Domain::kDisease;
  ConversationKind kind = ConversationKind::kComplex;
  std::vector<QATurn> turns;
  std::string generator_model;
  std::optional<int> question_index;        // descriptions
  std::optional<std::string> attribute_key;  // simple QA
};

// Throws Error("InvalidConversation"): empty turns, an empty question or
// answer, or a complex conversation outside 3..5 turns.
void validate_shape(const Conversation& conversation);

// One JSONL row: {id, image_id, domain, kind, turns, generator_model,
// question_index?, attribute_key?}.
ordered_json to_json(const Conversation& conversation);
Conversation conversation_from_json(const json& j);

std::vector<Conversation> read_conversations(const std::filesystem::path& path);
void write_conversations(const std::filesystem::path& path, const std::vector<Conversation>& conversations);

}  // namespace agroforge
