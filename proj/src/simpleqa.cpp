#include "agroforge/simpleqa.hpp"

#include "agroforge/error.hpp"
#include "agroforge/rng.hpp"
#include "agroforge/text.hpp"

namespace agroforge {

namespace {

QATemplate make(std::string id, std::string_view key, std::vector<std::string> phrasings,
                std::map<std::string, std::string, std::less<>> answer_map = {}) {
  return QATemplate{std::move(id), std::string(key), std::move(phrasings), std::move(answer_map)};
}

}  // namespace

std::vector<QATemplate> default_templates(Domain domain) {
  switch (domain) {
    case Domain::kDisease:
      return {
          make("plant_name", attr::kPlantName,
               {"What plant is shown in the image? Provide the name of the plant only.",
                "Which plant does this leaf belong to? Answer with the plant name only.",
                "Name the plant in this image. Give only the plant name."}),
          make("health_status", attr::kHealthStatus,
               {"Is the plant in the image healthy or diseased? Answer with one word.",
                "Does this leaf look healthy or diseased? Reply with a single word.",
                "What is the health status of the plant in the image? Answer healthy or diseased only."}),
          make("disease_name", attr::kDiseaseName,
               {std::string(kDiseaseNameTemplate),
                "Which disease is affecting this plant? Give only the disease name.",
                "Name the disease visible on this leaf. Provide the disease name only."}),
      };
    case Domain::kFruit:
      return {make("fruit_name", attr::kFruitName,
                   {"What fruit is shown in the image? Provide the name of the fruit only.",
                    "Which fruit is this? Answer with the fruit name only.",
                    "Name the fruit in the image. Give only its name."})};
    case Domain::kInsect:
      return {make("insect_name", attr::kInsectName,
                   {"What insect is shown in the image? Provide the name of the insect only.",
                    "Which pest is in this image? Answer with the insect name only.",
                    "Name the insect in the image. Give only its common name."})};
    case Domain::kWeed:
      return {make("weed_name", attr::kWeedName,
                   {"What weed is shown in the image? Provide the name of the weed only.",
                    "Which weed species is this seedling? Answer with the weed name only.",
                    "Name the weed in the image. Give only its common name."})};
  }
  return {};
}

std::vector<QATemplate> default_templates(std::string_view domain) {
  if (auto d = try_parse_domain(domain)) return default_templates(*d);
  return {};
}

std::map<Domain, std::vector<QATemplate>> templates_from_json(const json& j) {
  std::map<Domain, std::vector<QATemplate>> out;
  try {
    for (const auto& [domain, list] : j.items()) {
      auto& templates = out[parse_domain(domain)];
      for (const auto& tj : list) {
        QATemplate t;
        t.template_id = tj.at("template_id").get<std::string>();
        t.attribute_key = tj.at("attribute_key").get<std::string>();
        t.phrasings = tj.at("phrasings").get<std::vector<std::string>>();
        if (tj.contains("answer_map")) {
          for (const auto& [k, v] : tj.at("answer_map").items()) t.answer_map[k] = v.get<std::string>();
        }
        if (!attr::is_valid_key(t.attribute_key)) fail("InvalidAsset", "bad attribute key " + t.attribute_key);
        if (t.phrasings.empty()) fail("InvalidAsset", "template " + t.template_id + " has no phrasings");
        templates.push_back(std::move(t));
      }
    }
  } catch (const json::exception& e) {
    fail("InvalidAsset", e.what());
  }
  return out;
}

std::string normalize_gold(std::string_view value) {
  std::string gold = text::collapse_whitespace(text::to_lower(value));
  if (gold.empty() || gold.find_first_of(".,!?;:") != std::string::npos) {
    fail("InvalidAnswer", "gold answer '" + gold + "' is not a single short concept");
  }
  return gold;
}

std::vector<SimpleQA> render(const ImageRecord& record, std::span<const QATemplate> templates, std::uint64_t seed) {
  std::vector<SimpleQA> out;
  for (const auto& t : templates) {
    const std::string* value = record.find(t.attribute_key);
    if (!value || t.phrasings.empty()) continue;
    std::string gold = *value;
    if (!t.answer_map.empty()) {
      auto it = t.answer_map.find(*value);
      if (it == t.answer_map.end()) continue;
      gold = it->second;
    }
    Rng rng = Rng::derived(seed, "simple/" + record.id + "/" + t.template_id);
    SimpleQA qa;
    qa.image_id = record.id;
    qa.template_id = t.template_id;
    qa.question = t.phrasings[static_cast<std::size_t>(rng.below(t.phrasings.size()))];
    qa.gold_answer = normalize_gold(gold);
    qa.attribute_key = t.attribute_key;
    out.push_back(std::move(qa));
  }
  return out;
}

Conversation to_conversation(const SimpleQA& qa, Domain domain) {
  Conversation c;
  c.id = "simple/" + qa.image_id + "/" + qa.template_id;
  c.image_id = qa.image_id;
  c.domain = domain;
  c.kind = ConversationKind::kSimple;
  c.turns.push_back({qa.question, qa.gold_answer});
  c.generator_model = "rule-based";
  c.attribute_key = qa.attribute_key;
  return c;
}

}  // namespace agroforge
