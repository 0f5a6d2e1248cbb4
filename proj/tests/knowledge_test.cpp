#include <gtest/gtest.h>

#include "agroforge/ingest.hpp"
#include "agroforge/knowledge.hpp"
#include "support.hpp"

namespace agroforge {
namespace {

using testing::error_code_of;
using testing::fixture_dir;
using testing::TempDir;

TEST(KnowledgeParseTest, HeaderAndBody) {
  auto k = parse_knowledge_file(
      "class: Fall_Armyworms\nsources: https://a.example/x, https://b.example/y\n\nLine one.\n\nLine two.\n",
      Domain::kInsect, "t.txt");
  EXPECT_EQ(k.class_name, "fall armyworms");
  EXPECT_EQ(k.source_urls, (std::vector<std::string>{"https://a.example/x", "https://b.example/y"}));
  EXPECT_EQ(k.body, "Line one.\n\nLine two.");
}

TEST(KnowledgeParseTest, MalformedFiles) {
  auto parse = [](const char* s) {
    return error_code_of([&] { parse_knowledge_file(s, Domain::kWeed, "bad.txt"); });
  };
  EXPECT_EQ(parse("class: thistle\nsources: u\n\n   \n"), "MalformedEntry");
  EXPECT_EQ(parse("sources: u\n\nbody"), "MalformedEntry");
  EXPECT_EQ(parse("class: thistle\n\nbody"), "MalformedEntry");
  EXPECT_EQ(parse("class: thistle\nauthor: me\nsources: u\n\nbody"), "MalformedEntry");
  EXPECT_EQ(parse("just some prose\n\nbody"), "MalformedEntry");
  EXPECT_EQ(parse("class: thistle\nsources: u\n\nbody"), "");
}

TEST(KnowledgeBaseTest, LookupIsNormalized) {
  KnowledgeBase kb;
  kb.insert({Domain::kDisease, "Tomato___Early_blight", "text", {}});
  EXPECT_EQ(kb.lookup(Domain::kDisease, "  tomato early   BLIGHT ").body, "text");
  EXPECT_TRUE(kb.contains(Domain::kDisease, "TOMATO_EARLY_BLIGHT"));
  EXPECT_FALSE(kb.contains(Domain::kInsect, "tomato early blight"));
  EXPECT_EQ(error_code_of([&] { kb.lookup(Domain::kInsect, "tomato early blight"); }), "KnowledgeMissing");
  EXPECT_EQ(error_code_of([&] { kb.insert({Domain::kDisease, "tomato early blight", "again", {}}); }),
            "DuplicateEntry");
  EXPECT_EQ(error_code_of([&] { kb.insert({Domain::kDisease, "x", "  \n", {}}); }), "MalformedEntry");
  EXPECT_EQ(kb.size(), 1u);
}

TEST(KnowledgeLoadTest, FixtureCoversEveryClass) {
  auto kb = load_knowledge(fixture_dir() / "knowledge");
  std::vector<DatasetCatalog> catalogs;
  for (const char* id : {"cotton", "plantvillage", "plantdoc", "fruits100", "early_weed", "farm_insects"}) {
    catalogs.push_back(load_dataset(DatasetManifest::from_file(fixture_dir() / "manifests" / (std::string(id) + ".json"))));
  }
  auto report = coverage_report(kb, catalogs);
  EXPECT_EQ(report.total(), 3u + 5u + 4u + 4u + 3u + 4u);
  EXPECT_TRUE(report.complete());
  EXPECT_DOUBLE_EQ(report.percent(), 100.0);
  EXPECT_EQ(report.domains.size(), 4u);
}

TEST(KnowledgeLoadTest, UnknownDomainDirectoryFails) {
  TempDir dir;
  io::write_text(dir / "mushrooms/a.txt", "class: a\nsources: u\n\nbody\n");
  EXPECT_EQ(error_code_of([&] { load_knowledge(dir.path()); }), "MalformedEntry");
  EXPECT_EQ(error_code_of([&] { load_knowledge(dir / "absent"); }), "IoError");
}

DatasetCatalog classes_only(Domain domain, std::vector<std::string> classes) {
  DatasetCatalog c;
  c.dataset_id = "d";
  c.domain = domain;
  c.classes = std::move(classes);
  return c;
}

TEST(CoverageTest, PartialAndEmpty) {
  std::vector<DatasetCatalog> catalogs = {
      classes_only(Domain::kInsect, {"a", "b", "c", "d", "e", "f"}),
      classes_only(Domain::kWeed, {"g", "h", "i", "j", "k", "l"}),
  };
  KnowledgeBase kb;
  for (const char* n : {"a", "b", "c", "d", "e"}) kb.insert({Domain::kInsect, n, "x", {}});
  for (const char* n : {"g", "h", "i", "j"}) kb.insert({Domain::kWeed, n, "x", {}});
  // A weed entry filed under the wrong domain does not count.
  kb.insert({Domain::kInsect, "k", "x", {}});

  auto report = coverage_report(kb, catalogs);
  EXPECT_EQ(report.covered(), 9u);
  EXPECT_EQ(report.total(), 12u);
  EXPECT_DOUBLE_EQ(report.percent(), 75.0);
  EXPECT_FALSE(report.complete());
  std::map<Domain, std::vector<std::string>> missing;
  for (const auto& d : report.domains) missing[d.domain] = d.missing;
  EXPECT_EQ(missing[Domain::kInsect], std::vector<std::string>{"f"});
  EXPECT_EQ(missing[Domain::kWeed], (std::vector<std::string>{"k", "l"}));
  EXPECT_NE(report.render().find("missing: l"), std::string::npos);
  EXPECT_EQ(report.to_json()["covered"], 9);

  auto empty = coverage_report(KnowledgeBase{}, catalogs);
  EXPECT_DOUBLE_EQ(empty.percent(), 0.0);
  EXPECT_EQ(empty.covered(), 0u);
}

}  // namespace
}  // namespace agroforge
