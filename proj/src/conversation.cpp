#include "agroforge/conversation.hpp"

#include "agroforge/error.hpp"
#include "agroforge/text.hpp"

namespace agroforge {

std::string_view to_string(ConversationKind kind) {
  switch (kind) {
    case ConversationKind::kDescription:
      return "description";
    case ConversationKind::kComplex:
      return "complex";
    case ConversationKind::kSimple:
      return "simple";
  }
  return "complex";
}

ConversationKind parse_kind(std::string_view name) {
  if (name == "description") return ConversationKind::kDescription;
  if (name == "complex") return ConversationKind::kComplex;
  if (name == "simple") return ConversationKind::kSimple;
  fail("InvalidConversation", "unknown conversation kind '" + std::string(name) + "'");
}

void validate_shape(const Conversation& c) {
  if (c.turns.empty()) fail("InvalidConversation", c.id + ": no turns");
  for (const auto& t : c.turns) {
    if (text::trim(t.question).empty() || text::trim(t.answer).empty()) {
      fail("InvalidConversation", c.id + ": empty question or answer");
    }
  }
  if (c.kind == ConversationKind::kComplex && (c.turns.size() < 3 || c.turns.size() > 5)) {
    fail("InvalidConversation", c.id + ": complex conversations need 3-5 turns, got " +
                                    std::to_string(c.turns.size()));
  }
}

ordered_json to_json(const Conversation& c) {
  ordered_json j;
  j["id"] = c.id;
  j["image_id"] = c.image_id;
  j["domain"] = std::string(to_string(c.domain));
  j["kind"] = std::string(to_string(c.kind));
  ordered_json turns = ordered_json::array();
  for (const auto& t : c.turns) turns.push_back({{"question", t.question}, {"answer", t.answer}});
  j["turns"] = std::move(turns);
  j["generator_model"] = c.generator_model;
  if (c.question_index) j["question_index"] = *c.question_index;
  if (c.attribute_key) j["attribute_key"] = *c.attribute_key;
  return j;
}

Conversation conversation_from_json(const json& j) {
  try {
    Conversation c;
    c.id = j.at("id").get<std::string>();
    c.image_id = j.at("image_id").get<std::string>();
    c.domain = parse_domain(j.at("domain").get<std::string>());
    c.kind = parse_kind(j.at("kind").get<std::string>());
    for (const auto& t : j.at("turns")) {
      c.turns.push_back({t.at("question").get<std::string>(), t.at("answer").get<std::string>()});
    }
    c.generator_model = j.value("generator_model", std::string());
    if (j.contains("question_index")) c.question_index = j.at("question_index").get<int>();
    if (j.contains("attribute_key")) c.attribute_key = j.at("attribute_key").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    fail("InvalidConversation", e.what());
  }
}

std::vector<Conversation> read_conversations(const std::filesystem::path& path) {
  std::vector<Conversation> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(conversation_from_json(row));
  return out;
}

void write_conversations(const std::filesystem::path& path, const std::vector<Conversation>& conversations) {
  std::vector<std::string> lines;
  lines.reserve(conversations.size());
  for (const auto& c : conversations) lines.push_back(to_json(c).dump());
  io::write_lines(path, lines);
}

}  // namespace agroforge
