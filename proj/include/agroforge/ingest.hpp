#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "agroforge/json_io.hpp"

namespace agroforge {

enum class Domain { kDisease, kWeed, kInsect, kFruit };

inline constexpr std::array<Domain, 4> kAllDomains = {Domain::kDisease, Domain::kWeed,
                                                     Domain::kInsect, Domain::kFruit};

std::string_view to_string(Domain domain);
std::optional<Domain> try_parse_domain(std::string_view name);
// Throws Error("InvalidDomain").
Domain parse_domain(std::string_view name);

// Attribute keys an ImageRecord may carry.
namespace attr {
inline constexpr std::string_view kPlantName = "plant_name";
inline constexpr std::string_view kDiseaseName = "disease_name";
inline constexpr std::string_view kHealthStatus = "health_status";
inline constexpr std::string_view kInsectName = "insect_name";
inline constexpr std::string_view kFruitName = "fruit_name";
inline constexpr std::string_view kWeedName = "weed_name";
inline constexpr std::string_view kSubjectKind = "subject_kind";

inline constexpr std::array<std::string_view, 7> kAll = {
    kPlantName, kDiseaseName, kHealthStatus, kInsectName, kFruitName, kWeedName, kSubjectKind};
// Keys that name what is in the picture; health_status and subject_kind do not.
inline constexpr std::array<std::string_view, 5> kIdentifying = {
    kDiseaseName, kInsectName, kFruitName, kWeedName, kPlantName};

bool is_valid_key(std::string_view key);
}  // namespace attr

using AttributeMap = std::map<std::string, std::string, std::less<>>;

// Throws Error("InvalidAttributes") when the map breaks the record rules:
// unknown key, health_status outside {healthy, diseased}, a disease name on a
// healthy record, or no identifying attribute at all.
void validate_attributes(const AttributeMap& attributes);

struct ImageRecord {
  std::string id;  // "<dataset_id>/<class>/<filename>"
  std::string relative_path;
  std::string class_label;
  AttributeMap attributes;

  bool has(std::string_view key) const { return attributes.find(key) != attributes.end(); }
  const std::string* find(std::string_view key) const;
};

struct DatasetCatalog {
  std::string dataset_id;
  Domain domain = Domain::kDisease;
  std::string root;  // directory the relative paths resolve against
  std::vector<std::string> classes;
  std::vector<ImageRecord> records;
  std::string source_citation;

  std::filesystem::path image_path(const ImageRecord& record) const;
  std::map<std::string, std::size_t> class_counts() const;
  // Throws Error("InvalidCatalog") if any catalog invariant is broken.
  void validate() const;
};

ordered_json to_json(const DatasetCatalog& catalog);
DatasetCatalog catalog_from_json(const json& j);
DatasetCatalog read_catalog(const std::filesystem::path& path);
void write_catalog(const std::filesystem::path& path, const DatasetCatalog& catalog);

struct AttributeRule {
  std::string pattern;
  std::regex regex;
  // Values may reference capture groups as $1..$9.
  AttributeMap assignments;
};

// Per-dataset mapping from class-folder names to attribute maps. Rules are
// tried in order against the whole label; the first full match wins. The
// override table is consulted before any rule. Extracted values are
// normalized (lowercase, underscores to spaces, single-spaced) and then
// passed through the synonym table.
struct AttributeSchema {
  Domain domain = Domain::kDisease;
  std::vector<AttributeRule> rules;
  std::map<std::string, AttributeMap, std::less<>> overrides;
  std::map<std::string, std::string, std::less<>> synonyms;

  static AttributeSchema from_json(const json& j);
  static AttributeSchema from_file(const std::filesystem::path& path);
};

AttributeMap extract_attributes(std::string_view class_label, const AttributeSchema& schema);

// Manifest file: {dataset_id, domain, root, schema_path, citation}. Relative
// root/schema paths resolve against the manifest's directory.
struct DatasetManifest {
  std::string dataset_id;
  Domain domain = Domain::kDisease;
  std::filesystem::path root;
  std::filesystem::path schema_path;
  std::string citation;

  static DatasetManifest from_json(const json& j, const std::filesystem::path& base_dir);
  static DatasetManifest from_file(const std::filesystem::path& path);
};

bool is_image_file(const std::filesystem::path& path);

DatasetCatalog load_dataset(const std::filesystem::path& root, const DatasetManifest& manifest,
                            const AttributeSchema& schema);
DatasetCatalog load_dataset(const DatasetManifest& manifest);

struct HoldoutSplit {
  DatasetCatalog train;
  DatasetCatalog holdout;
};

// Per-class stratified split. Each class reserves round(fraction * size)
// records, clamped to [1, size - 1].
HoldoutSplit split_holdout(const DatasetCatalog& catalog, double holdout_fraction,
                           std::uint64_t seed);

std::size_t holdout_count(std::size_t class_size, double holdout_fraction);

}  // namespace agroforge
