#include "agroforge/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "agroforge/error.hpp"
#include "agroforge/rng.hpp"
#include "agroforge/text.hpp"

namespace agroforge {

namespace fs = std::filesystem;

std::string_view to_string(Domain domain) {
  switch (domain) {
    case Domain::kDisease:
      return "disease";
    case Domain::kWeed:
      return "weed";
    case Domain::kInsect:
      return "insect";
    case Domain::kFruit:
      return "fruit";
  }
  return "disease";
}

std::optional<Domain> try_parse_domain(std::string_view name) {
  std::string n = text::normalize_key(name);
  for (Domain d : kAllDomains) {
    if (n == to_string(d)) return d;
  }
  // Plural folder names are common in the knowledge tree.
  if (n == "diseases") return Domain::kDisease;
  if (n == "weeds") return Domain::kWeed;
  if (n == "insects") return Domain::kInsect;
  if (n == "fruits") return Domain::kFruit;
  return std::nullopt;
}

Domain parse_domain(std::string_view name) {
  if (auto d = try_parse_domain(name)) return *d;
  fail("InvalidDomain", "unknown domain '" + std::string(name) +
                            "' (expected disease, weed, insect or fruit)");
}

namespace attr {
bool is_valid_key(std::string_view key) {
  return std::find(kAll.begin(), kAll.end(), key) != kAll.end();
}
}  // namespace attr

void validate_attributes(const AttributeMap& attributes) {
  bool identifying = false;
  for (const auto& [key, value] : attributes) {
    if (!attr::is_valid_key(key)) fail("InvalidAttributes", "unknown attribute key '" + key + "'");
    if (value.empty()) fail("InvalidAttributes", "empty value for '" + key + "'");
    if (std::find(attr::kIdentifying.begin(), attr::kIdentifying.end(), key) !=
        attr::kIdentifying.end()) {
      identifying = true;
    }
  }
  auto health = attributes.find(attr::kHealthStatus);
  if (health != attributes.end() && health->second != "healthy" && health->second != "diseased") {
    fail("InvalidAttributes", "health_status must be healthy or diseased, got '" +
                                  health->second + "'");
  }
  if (attributes.count(attr::kDiseaseName) &&
      (health == attributes.end() || health->second != "diseased")) {
    fail("InvalidAttributes", "disease_name requires health_status = diseased");
  }
  if (!identifying) fail("InvalidAttributes", "no identifying attribute present");
}

const std::string* ImageRecord::find(std::string_view key) const {
  auto it = attributes.find(key);
  return it == attributes.end() ? nullptr : &it->second;
}

fs::path DatasetCatalog::image_path(const ImageRecord& record) const {
  return fs::path(root) / record.relative_path;
}

std::map<std::string, std::size_t> DatasetCatalog::class_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : classes) counts[c] = 0;
  for (const auto& r : records) ++counts[r.class_label];
  return counts;
}

void DatasetCatalog::validate() const {
  std::set<std::string, std::less<>> class_set(classes.begin(), classes.end());
  if (class_set.size() != classes.size()) fail("InvalidCatalog", "duplicate class names");
  std::set<std::string, std::less<>> ids;
  for (const auto& r : records) {
    if (!class_set.count(r.class_label)) {
      fail("InvalidCatalog", "record " + r.id + " has unknown class '" + r.class_label + "'");
    }
    if (!ids.insert(r.id).second) fail("DuplicateId", "duplicate record id " + r.id);
    validate_attributes(r.attributes);
  }
}

ordered_json to_json(const DatasetCatalog& catalog) {
  ordered_json j;
  j["dataset_id"] = catalog.dataset_id;
  j["domain"] = std::string(to_string(catalog.domain));
  j["root"] = catalog.root;
  j["source_citation"] = catalog.source_citation;
  j["classes"] = catalog.classes;
  ordered_json records = ordered_json::array();
  for (const auto& r : catalog.records) {
    ordered_json rj;
    rj["id"] = r.id;
    rj["path"] = r.relative_path;
    rj["class"] = r.class_label;
    ordered_json attrs = ordered_json::object();
    for (const auto& [k, v] : r.attributes) attrs[k] = v;
    rj["attributes"] = std::move(attrs);
    records.push_back(std::move(rj));
  }
  j["records"] = std::move(records);
  return j;
}

DatasetCatalog catalog_from_json(const json& j) {
  try {
    DatasetCatalog c;
    c.dataset_id = j.at("dataset_id").get<std::string>();
    c.domain = parse_domain(j.at("domain").get<std::string>());
    c.root = j.value("root", std::string());
    c.source_citation = j.value("source_citation", std::string());
    c.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& rj : j.at("records")) {
      ImageRecord r;
      r.id = rj.at("id").get<std::string>();
      r.relative_path = rj.at("path").get<std::string>();
      r.class_label = rj.at("class").get<std::string>();
      for (const auto& [k, v] : rj.at("attributes").items()) r.attributes[k] = v.get<std::string>();
      c.records.push_back(std::move(r));
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    fail("InvalidCatalog", e.what());
  }
}

DatasetCatalog read_catalog(const fs::path& path) { return catalog_from_json(io::read_json(path)); }

void write_catalog(const fs::path& path, const DatasetCatalog& catalog) {
  io::write_text(path, to_json(catalog).dump(2) + "\n");
}

AttributeSchema AttributeSchema::from_json(const json& j) {
  try {
    AttributeSchema s;
    s.domain = parse_domain(j.at("domain").get<std::string>());
    const json rules = j.value("rules", json::array());
    const json overrides = j.value("overrides", json::object());
    const json synonyms = j.value("synonyms", json::object());
    for (const auto& rj : rules) {
      AttributeRule rule;
      rule.pattern = rj.at("pattern").get<std::string>();
      try {
        rule.regex = std::regex(rule.pattern, std::regex::ECMAScript | std::regex::icase);
      } catch (const std::regex_error& e) {
        fail("InvalidSchema", "bad pattern '" + rule.pattern + "': " + e.what());
      }
      for (const auto& [k, v] : rj.at("attribute_assignments").items()) {
        if (!attr::is_valid_key(k)) fail("InvalidSchema", "unknown attribute key '" + k + "'");
        rule.assignments[k] = v.get<std::string>();
      }
      s.rules.push_back(std::move(rule));
    }
    for (const auto& [label, attrs] : overrides.items()) {
      AttributeMap m;
      for (const auto& [k, v] : attrs.items()) m[k] = v.get<std::string>();
      s.overrides[label] = std::move(m);
    }
    for (const auto& [from, to] : synonyms.items()) {
      s.synonyms[text::normalize_key(from)] = text::normalize_key(to.get<std::string>());
    }
    return s;
  } catch (const json::exception& e) {
    fail("InvalidSchema", e.what());
  }
}

AttributeSchema AttributeSchema::from_file(const fs::path& path) {
  return from_json(io::read_json(path));
}

namespace {

std::string expand_captures(const std::string& value, const std::smatch& m) {
  std::string out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (value[i] == '$' && i + 1 < value.size() &&
        std::isdigit(static_cast<unsigned char>(value[i + 1]))) {
      std::size_t group = static_cast<std::size_t>(value[i + 1] - '0');
      if (group < m.size()) out += m[group].str();
      ++i;
    } else {
      out.push_back(value[i]);
    }
  }
  return out;
}

AttributeMap finish(const AttributeMap& raw, const AttributeSchema& schema) {
  AttributeMap out;
  for (const auto& [k, v] : raw) {
    std::string value = text::normalize_key(v);
    if (auto syn = schema.synonyms.find(value); syn != schema.synonyms.end()) value = syn->second;
    if (!value.empty()) out[k] = value;
  }
  if (out.count(attr::kDiseaseName) && !out.count(attr::kHealthStatus)) {
    out[std::string(attr::kHealthStatus)] = "diseased";
  }
  validate_attributes(out);
  return out;
}

}  // namespace

AttributeMap extract_attributes(std::string_view class_label, const AttributeSchema& schema) {
  if (auto it = schema.overrides.find(class_label); it != schema.overrides.end()) {
    return finish(it->second, schema);
  }
  const std::string label(class_label);
  for (const auto& rule : schema.rules) {
    std::smatch m;
    if (std::regex_match(label, m, rule.regex)) {
      AttributeMap raw;
      for (const auto& [k, v] : rule.assignments) raw[k] = expand_captures(v, m);
      return finish(raw, schema);
    }
  }
  fail("UnparseableLabel", "class label '" + label + "' matches no rule or override");
}

DatasetManifest DatasetManifest::from_json(const json& j, const fs::path& base_dir) {
  try {
    DatasetManifest m;
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.domain = parse_domain(j.at("domain").get<std::string>());
    fs::path root = j.at("root").get<std::string>();
    fs::path schema = j.at("schema_path").get<std::string>();
    m.root = (root.is_absolute() ? root : base_dir / root).lexically_normal();
    m.schema_path = (schema.is_absolute() ? schema : base_dir / schema).lexically_normal();
    m.citation = j.value("citation", std::string());
    if (m.dataset_id.empty() || m.dataset_id.find('/') != std::string::npos) {
      fail("InvalidManifest", "dataset_id must be non-empty and contain no '/'");
    }
    return m;
  } catch (const json::exception& e) {
    fail("InvalidManifest", e.what());
  }
}

DatasetManifest DatasetManifest::from_file(const fs::path& path) {
  return from_json(io::read_json(path), path.parent_path());
}

bool is_image_file(const fs::path& path) {
  static const std::set<std::string, std::less<>> kExtensions = {
      ".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tif", ".tiff", ".webp"};
  return kExtensions.count(text::to_lower(path.extension().string())) > 0;
}

DatasetCatalog load_dataset(const fs::path& root, const DatasetManifest& manifest,
                            const AttributeSchema& schema) {
  if (schema.domain != manifest.domain) {
    fail("InvalidManifest", "schema domain does not match manifest domain for " +
                                manifest.dataset_id);
  }
  if (!fs::is_directory(root)) fail("EmptyDataset", "no dataset directory at " + root.string());

  DatasetCatalog catalog;
  catalog.dataset_id = manifest.dataset_id;
  catalog.domain = manifest.domain;
  catalog.root = root.string();
  catalog.source_citation = manifest.citation;

  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    if (name.empty() || name[0] == '.') continue;
    catalog.classes.push_back(name);
  }
  std::sort(catalog.classes.begin(), catalog.classes.end());
  if (catalog.classes.empty()) fail("EmptyDataset", "no class folders under " + root.string());

  std::set<std::string, std::less<>> ids;
  for (const auto& cls : catalog.classes) {
    AttributeMap attrs = extract_attributes(cls, schema);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / cls)) {
      std::string name = entry.path().filename().string();
      if (!entry.is_regular_file() || name.empty() || name[0] == '.') continue;
      if (!is_image_file(entry.path())) continue;
      files.push_back(name);
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      ImageRecord r;
      r.id = manifest.dataset_id + "/" + cls + "/" + file;
      r.relative_path = cls + "/" + file;
      r.class_label = cls;
      r.attributes = attrs;
      if (!ids.insert(r.id).second) fail("DuplicateId", "duplicate record id " + r.id);
      catalog.records.push_back(std::move(r));
    }
  }
  if (catalog.records.empty()) fail("EmptyDataset", "no images under " + root.string());
  return catalog;
}

DatasetCatalog load_dataset(const DatasetManifest& manifest) {
  return load_dataset(manifest.root, manifest, AttributeSchema::from_file(manifest.schema_path));
}

std::size_t holdout_count(std::size_t class_size, double holdout_fraction) {
  auto n = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(class_size)));
  n = std::max<std::size_t>(n, 1);
  return std::min(n, class_size - 1);
}

HoldoutSplit split_holdout(const DatasetCatalog& catalog, double holdout_fraction,
                           std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    fail("InvalidFraction", "holdout fraction must lie strictly between 0 and 1");
  }
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < catalog.records.size(); ++i) {
    by_class[catalog.records[i].class_label].push_back(i);
  }
  std::vector<bool> in_holdout(catalog.records.size(), false);
  for (const auto& cls : catalog.classes) {
    const auto& members = by_class[cls];
    if (members.size() < 2) {
      fail("ClassTooSmall", "class '" + cls + "' of " + catalog.dataset_id + " has " +
                                std::to_string(members.size()) + " record(s); need at least 2");
    }
    Rng rng = Rng::derived(seed, catalog.dataset_id + "/" + cls);
    for (std::size_t pick : rng.sample_indices(members.size(), holdout_count(members.size(), holdout_fraction))) {
      in_holdout[members[pick]] = true;
    }
  }

  HoldoutSplit split;
  for (DatasetCatalog* part : {&split.train, &split.holdout}) {
    part->dataset_id = catalog.dataset_id;
    part->domain = catalog.domain;
    part->root = catalog.root;
    part->classes = catalog.classes;
    part->source_citation = catalog.source_citation;
  }
  for (std::size_t i = 0; i < catalog.records.size(); ++i) {
    (in_holdout[i] ? split.holdout : split.train).records.push_back(catalog.records[i]);
  }
  return split;
}

}  // namespace agroforge
