#include "agroforge/knowledge.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "agroforge/error.hpp"
#include "agroforge/text.hpp"

namespace agroforge {

namespace fs = std::filesystem;

void KnowledgeBase::insert(ClassKnowledge entry) {
  entry.class_name = text::normalize_key(entry.class_name);
  if (entry.class_name.empty()) fail("MalformedEntry", "empty class name");
  if (text::trim(entry.body).empty()) {
    fail("MalformedEntry", "empty body for '" + entry.class_name + "'");
  }
  auto key = std::make_pair(entry.domain, entry.class_name);
  if (entries_.count(key)) {
    fail("DuplicateEntry", std::string(to_string(entry.domain)) + "/" + entry.class_name +
                               " appears more than once");
  }
  entries_.emplace(std::move(key), std::move(entry));
}

const ClassKnowledge& KnowledgeBase::lookup(Domain domain, std::string_view class_name) const {
  auto it = entries_.find({domain, text::normalize_key(class_name)});
  if (it == entries_.end()) {
    fail("KnowledgeMissing", "no knowledge for " + std::string(to_string(domain)) + "/'" +
                                 std::string(class_name) + "'");
  }
  return it->second;
}

bool KnowledgeBase::contains(Domain domain, std::string_view class_name) const {
  return entries_.count({domain, text::normalize_key(class_name)}) > 0;
}

ClassKnowledge parse_knowledge_file(std::string_view contents, Domain domain,
                                    std::string_view origin) {
  const std::string where(origin);
  ClassKnowledge k;
  k.domain = domain;
  bool have_class = false;
  bool have_sources = false;

  std::size_t pos = 0;
  while (pos < contents.size()) {
    std::size_t eol = contents.find('\n', pos);
    std::string_view line = contents.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? contents.size() : eol + 1;
    std::string_view trimmed = text::trim(line);
    if (trimmed.empty()) {
      if (have_class || have_sources) break;  // end of header
      continue;
    }
    std::size_t colon = trimmed.find(':');
    if (colon == std::string_view::npos) fail("MalformedEntry", where + ": header line without ':'");
    std::string key = text::to_lower(text::trim(trimmed.substr(0, colon)));
    std::string_view value = text::trim(trimmed.substr(colon + 1));
    if (key == "class") {
      k.class_name = text::normalize_key(value);
      have_class = true;
    } else if (key == "sources") {
      for (const auto& url : text::split(value, ',')) {
        std::string_view u = text::trim(url);
        if (!u.empty()) k.source_urls.emplace_back(u);
      }
      have_sources = true;
    } else {
      fail("MalformedEntry", where + ": unexpected header key '" + key + "'");
    }
  }
  if (!have_class || !have_sources || k.class_name.empty()) {
    fail("MalformedEntry", where + ": missing class/sources header");
  }
  k.body = std::string(text::trim(contents.substr(std::min(pos, contents.size()))));
  if (k.body.empty()) fail("MalformedEntry", where + ": empty body");
  return k;
}

KnowledgeBase load_knowledge(const fs::path& root) {
  if (!fs::is_directory(root)) fail("IoError", "knowledge root " + root.string() + " is not a directory");
  KnowledgeBase kb;
  std::vector<fs::path> domain_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string()[0] != '.') {
      domain_dirs.push_back(entry.path());
    }
  }
  std::sort(domain_dirs.begin(), domain_dirs.end());
  for (const auto& dir : domain_dirs) {
    auto domain = try_parse_domain(dir.filename().string());
    if (!domain) fail("MalformedEntry", dir.string() + ": directory is not a known domain");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().filename().string()[0] != '.') {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      kb.insert(parse_knowledge_file(io::read_text(file), *domain, file.string()));
    }
  }
  return kb;
}

double DomainCoverage::percent() const {
  return total() == 0 ? 100.0 : 100.0 * static_cast<double>(covered.size()) / static_cast<double>(total());
}

std::size_t CoverageReport::covered() const {
  std::size_t n = 0;
  for (const auto& d : domains) n += d.covered.size();
  return n;
}

std::size_t CoverageReport::total() const {
  std::size_t n = 0;
  for (const auto& d : domains) n += d.total();
  return n;
}

double CoverageReport::percent() const {
  return total() == 0 ? 0.0 : 100.0 * static_cast<double>(covered()) / static_cast<double>(total());
}

std::string CoverageReport::render() const {
  std::ostringstream out;
  char buf[128];
  for (const auto& d : domains) {
    std::snprintf(buf, sizeof(buf), "%-8s %4zu/%-4zu %6.2f%%\n", std::string(to_string(d.domain)).c_str(),
                  d.covered.size(), d.total(), d.percent());
    out << buf;
    for (const auto& m : d.missing) out << "  missing: " << m << "\n";
  }
  std::snprintf(buf, sizeof(buf), "total    %4zu/%-4zu %6.2f%%\n", covered(), total(), percent());
  out << buf;
  return out.str();
}

ordered_json CoverageReport::to_json() const {
  ordered_json j;
  ordered_json ds = ordered_json::array();
  for (const auto& d : domains) {
    ordered_json dj;
    dj["domain"] = std::string(to_string(d.domain));
    dj["covered"] = d.covered;
    dj["missing"] = d.missing;
    dj["percent"] = d.percent();
    ds.push_back(std::move(dj));
  }
  j["domains"] = std::move(ds);
  j["covered"] = covered();
  j["total"] = total();
  j["percent"] = percent();
  return j;
}

CoverageReport coverage_report(const KnowledgeBase& kb, std::span<const DatasetCatalog> catalogs) {
  std::map<Domain, std::set<std::string>> classes;
  for (const auto& c : catalogs) {
    for (const auto& cls : c.classes) classes[c.domain].insert(text::normalize_key(cls));
  }
  CoverageReport report;
  for (const auto& [domain, names] : classes) {
    DomainCoverage d;
    d.domain = domain;
    for (const auto& n : names) (kb.contains(domain, n) ? d.covered : d.missing).push_back(n);
    report.domains.push_back(std::move(d));
  }
  return report;
}

}  // namespace agroforge
