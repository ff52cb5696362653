#include "vig/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <unordered_set>

#include <fmt/format.h>

namespace vig::text {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

struct Irregular {
  std::string_view singular;
  std::string_view plural;
};

constexpr std::array<Irregular, 12> kIrregular{{
    {"person", "people"},
    {"man", "men"},
    {"woman", "women"},
    {"child", "children"},
    {"mouse", "mice"},
    {"foot", "feet"},
    {"tooth", "teeth"},
    {"goose", "geese"},
    {"knife", "knives"},
    {"leaf", "leaves"},
    {"shelf", "shelves"},
    {"wolf", "wolves"},
}};

// Same form in singular and plural, or plural-only nouns we never strip.
const std::unordered_set<std::string_view>& invariant_words() {
  static const std::unordered_set<std::string_view> words{
      "sheep", "fish", "deer", "series", "species", "scissors", "pants", "jeans",
      "shorts", "glasses", "clothes", "news", "aircraft", "bison", "moose", "trousers",
      "binoculars", "sunglasses", "goggles", "headphones", "skis", "tongs"};
  return words;
}

const std::unordered_set<std::string_view>& stop_words() {
  static const std::unordered_set<std::string_view> words{
      "a",     "an",    "the",   "is",    "are",   "was",   "were", "be",   "been",  "being",
      "of",    "in",    "on",    "at",    "to",    "for",   "with", "by",   "from",  "and",
      "or",    "but",   "it",    "its",   "this",  "that",  "these", "those", "there", "here",
      "has",   "have",  "had",   "do",    "does",  "did",   "can",  "could", "would", "should",
      "will",  "what",  "which", "who",   "whom",  "how",   "where", "when", "why",   "as",
      "into",  "onto",  "about", "image", "picture", "photo", "i",   "you",  "we",    "they",
      "he",    "she",   "them",  "their", "our",   "your",  "my",   "me",   "us",    "some",
      "any",   "also",  "very",  "so",    "than",  "then",  "not",  "no",   "yes",   "if",
      "up",    "out",   "over",  "under", "near",  "one",   "tell", "describe", "see", "visible",
      "shown", "show",  "shows", "located", "appears", "appear", "seen"};
  return words;
}

bool is_vowel(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

std::string singularize_word(std::string_view w) {
  if (w.size() < 3 || invariant_words().contains(w)) {
    return std::string(w);
  }
  for (const auto& irr : kIrregular) {
    if (w == irr.plural) {
      return std::string(irr.singular);
    }
    if (w == irr.singular) {
      return std::string(w);
    }
  }
  auto ends = [&](std::string_view suffix) { return w.ends_with(suffix); };
  if (ends("ss") || ends("us") || ends("is")) {
    return std::string(w);
  }
  if (ends("ies") && w.size() > 4) {
    return std::string(w.substr(0, w.size() - 3)) + "y";
  }
  if (ends("sses") || ends("xes") || ends("ches") || ends("shes") || ends("zes") ||
      ends("oes")) {
    return std::string(w.substr(0, w.size() - 2));
  }
  if (ends("s")) {
    return std::string(w.substr(0, w.size() - 1));
  }
  return std::string(w);
}

std::string pluralize_word(std::string_view w) {
  if (w.empty() || invariant_words().contains(w)) {
    return std::string(w);
  }
  for (const auto& irr : kIrregular) {
    if (w == irr.singular) {
      return std::string(irr.plural);
    }
  }
  auto ends = [&](std::string_view suffix) { return w.ends_with(suffix); };
  if (ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh")) {
    return std::string(w) + "es";
  }
  if (ends("y") && w.size() > 1 && !is_vowel(w[w.size() - 2])) {
    return std::string(w.substr(0, w.size() - 1)) + "ies";
  }
  return std::string(w) + "s";
}

// Applies fn to the last space-separated word of a phrase.
template <typename Fn>
std::string on_last_word(std::string_view phrase, Fn fn) {
  const auto pos = phrase.rfind(' ');
  if (pos == std::string_view::npos) {
    return fn(phrase);
  }
  return std::string(phrase.substr(0, pos + 1)) + fn(phrase.substr(pos + 1));
}

}  // namespace

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) {
      ++n;
    }
  }
  return n;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

bool starts_with_icase(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < s.size()) {
        lines.emplace_back(s.substr(start));
      }
      break;
    }
    auto line = s.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    lines.emplace_back(line);
    start = nl + 1;
  }
  return lines;
}

std::string singularize(std::string_view word) {
  return on_last_word(word, singularize_word);
}

std::string pluralize(std::string_view word) {
  return on_last_word(word, pluralize_word);
}

std::string normalize_label(std::string_view label) {
  return singularize(collapse_whitespace(to_lower(label)));
}

std::vector<std::string> content_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !stop_words().contains(cur)) {
      words.push_back(cur);
    }
    cur.clear();
  };
  for (unsigned char c : s) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c != '.' && c != '!' && c != '?') {
      continue;
    }
    // Absorb runs like "?!" or "...".
    std::size_t j = i + 1;
    while (j < s.size() && (s[j] == '.' || s[j] == '!' || s[j] == '?')) ++j;
    if (j == s.size() || is_space(s[j])) {
      auto piece = collapse_whitespace(s.substr(start, j - start));
      if (!piece.empty()) out.push_back(std::move(piece));
      start = j;
    }
    i = j - 1;
  }
  auto tail = collapse_whitespace(s.substr(std::min(start, s.size())));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace vig::text
