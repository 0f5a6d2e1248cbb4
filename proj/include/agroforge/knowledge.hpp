#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agroforge/ingest.hpp"

namespace agroforge {

struct ClassKnowledge {
  Domain domain = Domain::kDisease;
  std::string class_name;  // normalized
  std::string body;
  std::vector<std::string> source_urls;
};

// Curated background text keyed by (domain, normalized class name). Keys are
// normalized with text::normalize_key, so lookups ignore case, underscores
// and surrounding or repeated whitespace.
class KnowledgeBase {
 public:
  // Throws Error("DuplicateEntry") on a repeated key, Error("MalformedEntry")
  // on an empty body.
  void insert(ClassKnowledge entry);

  // Throws Error("KnowledgeMissing").
  const ClassKnowledge& lookup(Domain domain, std::string_view class_name) const;
  bool contains(Domain domain, std::string_view class_name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::pair<Domain, std::string>, ClassKnowledge>& entries() const {
    return entries_;
  }

 private:
  std::map<std::pair<Domain, std::string>, ClassKnowledge> entries_;
};

// Parses one knowledge file: `class: <name>` and `sources: <urls>` header
// lines, a blank line, then the body.
ClassKnowledge parse_knowledge_file(std::string_view contents, Domain domain,
                                    std::string_view origin);

// Layout: <root>/<domain>/<any file>. Every file must parse; the first bad
// file aborts the load with MalformedEntry naming it.
KnowledgeBase load_knowledge(const std::filesystem::path& root);

struct DomainCoverage {
  Domain domain = Domain::kDisease;
  std::vector<std::string> covered;
  std::vector<std::string> missing;

  std::size_t total() const { return covered.size() + missing.size(); }
  double percent() const;
};

struct CoverageReport {
  std::vector<DomainCoverage> domains;  // only domains present in the catalogs

  std::size_t covered() const;
  std::size_t total() const;
  double percent() const;
  bool complete() const { return covered() == total(); }
  std::string render() const;
  ordered_json to_json() const;
};

CoverageReport coverage_report(const KnowledgeBase& kb, std::span<const DatasetCatalog> catalogs);

}  // namespace agroforge
