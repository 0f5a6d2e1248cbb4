#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace agroforge {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace io {

std::string read_text(const std::filesystem::path& path);
json read_json(const std::filesystem::path& path);
std::vector<json> read_jsonl(const std::filesystem::path& path);

// Writes via a sibling temp file and rename so readers never see a
// half-written file.
void write_text(const std::filesystem::path& path, const std::string& contents);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// Appends one line and fsyncs before returning.
void append_line_durable(const std::filesystem::path& path, const std::string& line);

}  // namespace io
}  // namespace agroforge
