#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace vig::text {

// Number of UTF-8 code points. Invalid continuation bytes count as one each.
std::size_t utf8_length(std::string_view s);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool starts_with_icase(std::string_view s, std::string_view prefix);

// Collapses every run of whitespace (including newlines) into one space and trims.
std::string collapse_whitespace(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

// Lowercase, trimmed, inner whitespace collapsed, singularized.
std::string normalize_label(std::string_view label);
std::string singularize(std::string_view word);
std::string pluralize(std::string_view word);

// Lowercase alphanumeric tokens minus a small English stop-word list.
std::vector<std::string> content_words(std::string_view s);

// Splits prose on '.', '!' or '?' followed by whitespace or end of input.
// Terminators stay attached to their sentence; empty pieces are dropped.
std::vector<std::string> split_sentences(std::string_view s);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// SplitMix64 finalizer; used to derive independent per-item seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace vig::text
