#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "vig/text.hpp"

using namespace vig;

TEST_CASE("utf8 length counts code points") {
  CHECK(text::utf8_length("") == 0);
  CHECK(text::utf8_length("abc") == 3);
  CHECK(text::utf8_length("caf\xc3\xa9") == 4);
  CHECK(text::utf8_length("\xe2\x88\xa9") == 1);
}

TEST_CASE("whitespace helpers") {
  CHECK(text::trim("  a b \n") == "a b");
  CHECK(text::collapse_whitespace(" a \n\t b  c ") == "a b c");
  CHECK(text::collapse_whitespace("\n\n") == "");
  CHECK(text::split_lines("a\nb\r\nc").size() == 3);
  CHECK(text::iequals("Human", "hUMAN"));
  CHECK(text::starts_with_icase("Assistant: hi", "assistant:"));
}

TEST_CASE("label normalization singularizes") {
  CHECK(text::normalize_label("  Dogs ") == "dog");
  CHECK(text::normalize_label("Coffee  Cups") == "coffee cup");
  CHECK(text::normalize_label("Glasses") == "glasses");
  CHECK(text::singularize("classes") == "class");
  CHECK(text::singularize("people") == "person");
  CHECK(text::singularize("boxes") == "box");
  CHECK(text::singularize("glass") == "glass");
  CHECK(text::pluralize("person") == "people");
  CHECK(text::pluralize("cup") == "cups");
  CHECK(text::pluralize("box") == "boxes");
  CHECK(text::pluralize("sheep") == "sheep");
}

TEST_CASE("sentence split agrees with a scanning oracle") {
  const char* samples[] = {
      "There is a dog. It is brown!",
      "One sentence without terminator",
      "Version 2.5 is out. Really? Yes.",
      "Trailing spaces.   ",
      "",
      "Wait... what? ok",
  };
  for (const char* s : samples) {
    CAPTURE(s);
    CHECK(text::split_sentences(s).size() == testing::oracle_sentence_count(s));
  }
  const auto parts = text::split_sentences("A cat. A dog sleeps!");
  REQUIRE(parts.size() == 2);
  CHECK(parts[0] == "A cat.");
  CHECK(parts[1] == "A dog sleeps!");
}

TEST_CASE("fnv1a64 matches an independent implementation") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    std::string s(static_cast<std::size_t>(rng() % 40), ' ');
    for (auto& c : s) c = static_cast<char>(rng() % 256);
    CHECK(text::fnv1a64(s) == testing::oracle_fnv1a64(s));
  }
  CHECK(text::hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("content words drop stop words") {
  const auto w = text::content_words("There is a Red car in the image.");
  CHECK(std::find(w.begin(), w.end(), "red") != w.end());
  CHECK(std::find(w.begin(), w.end(), "car") != w.end());
  CHECK(std::find(w.begin(), w.end(), "the") == w.end());
  CHECK(std::find(w.begin(), w.end(), "is") == w.end());
}
