#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace agroforge::text {

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::string collapse_whitespace(std::string_view s);

// Lowercase, underscores to spaces, trim, collapse internal whitespace.
// Used for every join between folder-derived names and curated keys.
std::string normalize_key(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool iequals(std::string_view a, std::string_view b);
bool contains(std::string_view haystack, std::string_view needle);

// Longest prefix of `s` no longer than `max_bytes` that does not split a
// UTF-8 sequence.
std::string_view utf8_prefix(std::string_view s, std::size_t max_bytes);

std::uint64_t fnv1a64(std::string_view s);
std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);

}  // namespace agroforge::text
