#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vig/metadata.hpp"

namespace vig {

enum class ContextOrigin { caption, qa, tree };

std::string to_string(ContextOrigin origin);
ContextOrigin parse_context_origin(std::string_view s);

struct ContextSentence {
  std::string text;  // single line, non-empty
  ContextOrigin origin = ContextOrigin::caption;
  std::string source;
  std::size_t char_len = 0;  // UTF-8 code points

  friend bool operator==(const ContextSentence&, const ContextSentence&) = default;
};

// Collapses whitespace (so no newline survives) and measures the text.
// Throws EmptyDescription if nothing is left.
ContextSentence make_sentence(std::string_view text, ContextOrigin origin, std::string source);

struct ContextSet {
  ImageRef image;
  std::vector<ContextSentence> sentences;
  std::size_t total_chars = 0;

  void recompute_total();
  bool has_origin(ContextOrigin origin) const;
  bool empty() const { return sentences.empty(); }

  friend bool operator==(const ContextSet&, const ContextSet&) = default;
};

}  // namespace vig
