#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "agroforge/ingest.hpp"
#include "agroforge/json_io.hpp"
#include "support.hpp"

namespace agroforge {
namespace {

namespace fs = std::filesystem;
using testing::error_code_of;
using testing::fixture_dir;
using testing::TempDir;

void touch(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << p.filename().string();
}

AttributeSchema insect_schema() {
  return AttributeSchema::from_json(json::parse(R"js({
    "domain": "insect",
    "rules": [{"pattern": "(.+)", "attribute_assignments": {"insect_name": "$1"}}],
    "synonyms": {"fall armyworms": "fall armyworm"}
  })js"));
}

DatasetManifest manifest_for(const std::string& id, Domain domain) {
  DatasetManifest m;
  m.dataset_id = id;
  m.domain = domain;
  return m;
}

TEST(DomainTest, ParsesSingularAndPlural) {
  EXPECT_EQ(parse_domain("insect"), Domain::kInsect);
  EXPECT_EQ(parse_domain("weeds"), Domain::kWeed);
  EXPECT_EQ(to_string(Domain::kFruit), "fruit");
  EXPECT_EQ(error_code_of([] { parse_domain("mushroom"); }), "InvalidDomain");
}

TEST(AttributesTest, ValidationRules) {
  EXPECT_NO_THROW(validate_attributes({{"plant_name", "tomato"}, {"health_status", "healthy"}}));
  EXPECT_EQ(error_code_of([] { validate_attributes({{"health_status", "healthy"}}); }), "InvalidAttributes");
  EXPECT_EQ(error_code_of([] {
              validate_attributes({{"plant_name", "tomato"}, {"health_status", "healthy"}, {"disease_name", "x"}});
            }),
            "InvalidAttributes");
  EXPECT_EQ(error_code_of([] { validate_attributes({{"plant_name", "tomato"}, {"health_status", "sick"}}); }),
            "InvalidAttributes");
  EXPECT_EQ(error_code_of([] { validate_attributes({{"colour", "red"}, {"plant_name", "apple"}}); }),
            "InvalidAttributes");
}

TEST(ExtractTest, RulesCapturesSynonymsAndOverrides) {
  auto schema = AttributeSchema::from_json(json::parse(R"js({
    "domain": "disease",
    "overrides": {"weird_folder": {"plant_name": "Cotton", "health_status": "healthy"}},
    "rules": [
      {"pattern": "(.+)___healthy", "attribute_assignments": {"plant_name": "$1", "health_status": "healthy"}},
      {"pattern": "(.+)___(.+)", "attribute_assignments": {"plant_name": "$1", "disease_name": "$2"}}
    ],
    "synonyms": {"corn (maize)": "corn"}
  })js"));
  auto a = extract_attributes("Tomato___Early_blight", schema);
  EXPECT_EQ(a.at("plant_name"), "tomato");
  EXPECT_EQ(a.at("disease_name"), "early blight");
  EXPECT_EQ(a.at("health_status"), "diseased");  // implied by the disease name

  auto b = extract_attributes("Corn_(maize)___healthy", schema);
  EXPECT_EQ(b.at("plant_name"), "corn");
  EXPECT_EQ(b.at("health_status"), "healthy");
  EXPECT_FALSE(b.count("disease_name"));

  auto c = extract_attributes("weird_folder", schema);
  EXPECT_EQ(c.at("plant_name"), "cotton");

  EXPECT_EQ(error_code_of([&] { extract_attributes("no-separator", schema); }), "UnparseableLabel");
}

TEST(ExtractTest, BadSchemaIsRejected) {
  EXPECT_EQ(error_code_of([] {
              AttributeSchema::from_json(json::parse(
                  R"js({"domain":"fruit","rules":[{"pattern":"(","attribute_assignments":{"fruit_name":"$1"}}]})js"));
            }),
            "InvalidSchema");
  EXPECT_EQ(error_code_of([] {
              AttributeSchema::from_json(json::parse(
                  R"js({"domain":"fruit","rules":[{"pattern":"(.+)","attribute_assignments":{"flavour":"$1"}}]})js"));
            }),
            "InvalidSchema");
}

TEST(LoadDatasetTest, FixtureCatalog) {
  auto catalog = load_dataset(DatasetManifest::from_file(fixture_dir() / "manifests/plantvillage.json"));
  EXPECT_EQ(catalog.dataset_id, "plantvillage");
  EXPECT_EQ(catalog.domain, Domain::kDisease);
  ASSERT_EQ(catalog.classes.size(), 5u);
  EXPECT_EQ(catalog.records.size(), 30u);
  for (const auto& [cls, n] : catalog.class_counts()) EXPECT_EQ(n, 6u) << cls;
  std::set<std::string> plants;
  for (const auto& r : catalog.records) {
    plants.insert(r.attributes.at("plant_name"));
    EXPECT_EQ(r.id, "plantvillage/" + r.relative_path);
    EXPECT_TRUE(fs::exists(catalog.image_path(r)));
  }
  EXPECT_EQ(plants, (std::set<std::string>{"apple", "corn", "tomato"}));
  EXPECT_NO_THROW(catalog.validate());
}

TEST(LoadDatasetTest, SkipsHiddenAndNonImageFiles) {
  TempDir dir;
  touch(dir / "Thrips/a.jpg");
  touch(dir / "Thrips/b.PNG");
  touch(dir / "Thrips/notes.txt");
  touch(dir / "Thrips/.c.jpg");
  touch(dir / ".cache/d.jpg");
  auto catalog = load_dataset(dir.path(), manifest_for("bugs", Domain::kInsect), insect_schema());
  ASSERT_EQ(catalog.classes, std::vector<std::string>{"Thrips"});
  ASSERT_EQ(catalog.records.size(), 2u);
  EXPECT_EQ(catalog.records[0].id, "bugs/Thrips/a.jpg");
  EXPECT_EQ(catalog.records[1].attributes.at("insect_name"), "thrips");
}

TEST(LoadDatasetTest, EmptyInputsFail) {
  TempDir dir;
  EXPECT_EQ(error_code_of([&] { load_dataset(dir.path(), manifest_for("x", Domain::kInsect), insect_schema()); }),
            "EmptyDataset");
  fs::create_directories(dir / "Thrips");
  EXPECT_EQ(error_code_of([&] { load_dataset(dir.path(), manifest_for("x", Domain::kInsect), insect_schema()); }),
            "EmptyDataset");
  EXPECT_EQ(error_code_of([&] { load_dataset(dir / "nope", manifest_for("x", Domain::kInsect), insect_schema()); }),
            "EmptyDataset");
}

TEST(LoadDatasetTest, DomainMismatchIsRejected) {
  TempDir dir;
  touch(dir / "Thrips/a.jpg");
  EXPECT_EQ(error_code_of([&] { load_dataset(dir.path(), manifest_for("x", Domain::kFruit), insect_schema()); }),
            "InvalidManifest");
}

TEST(ManifestTest, ResolvesRelativePaths) {
  auto m = DatasetManifest::from_file(fixture_dir() / "manifests/cotton.json");
  EXPECT_EQ(m.root, (fixture_dir() / "datasets/cotton").lexically_normal());
  EXPECT_EQ(m.schema_path, (fixture_dir() / "schemas/cotton.json").lexically_normal());
  EXPECT_EQ(error_code_of([] {
              DatasetManifest::from_json(json::parse(R"js({"dataset_id":"a/b","domain":"fruit","root":".",
                                                         "schema_path":"s.json"})js"),
                                         ".");
            }),
            "InvalidManifest");
}

TEST(CatalogJsonTest, RoundTrip) {
  TempDir dir;
  auto catalog = load_dataset(DatasetManifest::from_file(fixture_dir() / "manifests/farm_insects.json"));
  write_catalog(dir / "c.json", catalog);
  auto back = read_catalog(dir / "c.json");
  EXPECT_EQ(back.dataset_id, catalog.dataset_id);
  EXPECT_EQ(back.classes, catalog.classes);
  ASSERT_EQ(back.records.size(), catalog.records.size());
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    EXPECT_EQ(back.records[i].id, catalog.records[i].id);
    EXPECT_EQ(back.records[i].attributes, catalog.records[i].attributes);
  }
  EXPECT_EQ(back.records[10].attributes.at("insect_name"), "fall armyworm");
}

// Builds a catalog in memory with the given class sizes.
DatasetCatalog synthetic_catalog(const std::vector<std::size_t>& sizes) {
  DatasetCatalog c;
  c.dataset_id = "synthetic";
  c.domain = Domain::kFruit;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    std::string cls = "class" + std::to_string(k);
    c.classes.push_back(cls);
    for (std::size_t i = 0; i < sizes[k]; ++i) {
      ImageRecord r;
      r.relative_path = cls + "/" + std::to_string(i) + ".jpg";
      r.id = "synthetic/" + r.relative_path;
      r.class_label = cls;
      r.attributes = {{"fruit_name", cls}};
      c.records.push_back(r);
    }
  }
  return c;
}

TEST(SplitTest, PerClassCountsRoundFromFraction) {
  // 0.2 of 10, 20 and 30 records: 2, 4 and 6 held out.
  auto split = split_holdout(synthetic_catalog({10, 20, 30}), 0.2, 11);
  std::map<std::string, std::size_t> held;
  for (const auto& r : split.holdout.records) ++held[r.class_label];
  EXPECT_EQ(held["class0"], 2u);
  EXPECT_EQ(held["class1"], 4u);
  EXPECT_EQ(held["class2"], 6u);
  EXPECT_EQ(split.train.records.size(), 48u);
}

TEST(SplitTest, ClampsToKeepBothSidesNonEmpty) {
  EXPECT_EQ(holdout_count(2, 0.01), 1u);
  EXPECT_EQ(holdout_count(2, 0.99), 1u);
  EXPECT_EQ(holdout_count(5, 0.5), 3u);  // 2.5 rounds half away from zero
  EXPECT_EQ(holdout_count(100, 0.125), 13u);
}

TEST(SplitTest, DisjointCoveringAndDeterministic) {
  auto catalog = synthetic_catalog({7, 3, 12});
  auto a = split_holdout(catalog, 0.3, 5);
  auto b = split_holdout(catalog, 0.3, 5);
  auto c = split_holdout(catalog, 0.3, 6);
  std::vector<std::string> ha, hb, hc;
  for (const auto& r : a.holdout.records) ha.push_back(r.id);
  for (const auto& r : b.holdout.records) hb.push_back(r.id);
  for (const auto& r : c.holdout.records) hc.push_back(r.id);
  EXPECT_EQ(ha, hb);
  EXPECT_NE(ha, hc);

  std::set<std::string> all;
  for (const auto& r : a.train.records) all.insert(r.id);
  for (const auto& r : a.holdout.records) EXPECT_TRUE(all.insert(r.id).second) << "overlap " << r.id;
  EXPECT_EQ(all.size(), catalog.records.size());

  // Original order survives inside each part.
  for (const auto* part : {&a.train, &a.holdout}) {
    for (std::size_t i = 1; i < part->records.size(); ++i) {
      auto pos = [&](const std::string& id) {
        for (std::size_t k = 0; k < catalog.records.size(); ++k) {
          if (catalog.records[k].id == id) return k;
        }
        return catalog.records.size();
      };
      EXPECT_LT(pos(part->records[i - 1].id), pos(part->records[i].id));
    }
  }
}

TEST(SplitTest, Errors) {
  EXPECT_EQ(error_code_of([] { split_holdout(synthetic_catalog({4}), 0.0, 1); }), "InvalidFraction");
  EXPECT_EQ(error_code_of([] { split_holdout(synthetic_catalog({4}), 1.0, 1); }), "InvalidFraction");
  EXPECT_EQ(error_code_of([] { split_holdout(synthetic_catalog({4, 1}), 0.5, 1); }), "ClassTooSmall");
}

}  // namespace
}  // namespace agroforge
