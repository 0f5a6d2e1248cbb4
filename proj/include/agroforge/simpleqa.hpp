#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agroforge/conversation.hpp"
#include "agroforge/ingest.hpp"

namespace agroforge {

// Fixed disease-name phrasing; always part of the disease template set.
inline constexpr std::string_view kDiseaseNameTemplate =
    "What disease does the plant in the image have? Provide the name of the disease only.";

struct QATemplate {
  std::string template_id;
  std::string attribute_key;
  std::vector<std::string> phrasings;
  // When non-empty, the gold answer is answer_map[attribute value] instead of
  // the value itself (e.g. health_status -> yes/no).
  std::map<std::string, std::string, std::less<>> answer_map;
};

struct SimpleQA {
  std::string image_id;
  std::string template_id;
  std::string question;
  std::string gold_answer;
  std::string attribute_key;
};

// Built-in templates; an unknown domain yields an empty list.
std::vector<QATemplate> default_templates(std::string_view domain);
std::vector<QATemplate> default_templates(Domain domain);

// Asset JSON: {"<domain>": [{template_id, attribute_key, phrasings, answer_map?}]}
// Throws Error("InvalidAsset").
std::map<Domain, std::vector<QATemplate>> templates_from_json(const json& j);

// Lowercase + trim. Throws Error("InvalidAnswer") if the result carries
// sentence punctuation.
std::string normalize_gold(std::string_view value);

std::vector<SimpleQA> render(const ImageRecord& record, std::span<const QATemplate> templates, std::uint64_t seed);

Conversation to_conversation(const SimpleQA& qa, Domain domain);

}  // namespace agroforge
