#include <doctest.h>

#include <regex>
#include <set>

#include "models.hpp"
#include "oracles.hpp"
#include "vig/error.hpp"
#include "vig/instruction_gen.hpp"
#include "vig/scripted_server.hpp"
#include "vig/text.hpp"

using namespace vig;
using testing::FnModel;

namespace {

const TaskPrompts kPrompts = TaskPrompts::defaults();

ContextSet context_of(const std::vector<std::string>& sentences) {
  ContextSet c;
  c.image = {"d", "1", "x.jpg", 640, 480};
  for (const auto& s : sentences) c.sentences.push_back(make_sentence(s, ContextOrigin::caption, "d"));
  c.recompute_total();
  return c;
}

// Numbered facts shown in a prompt, in order.
std::vector<std::string> shown_facts(const ChatRequest& r) {
  static const std::regex line(R"(^(\d+)\. (.*)$)");
  std::vector<std::string> out;
  for (const auto& l : text::split_lines(testing::last_user(r))) {
    std::smatch m;
    if (std::regex_match(l, m, line)) out.push_back(m[2]);
  }
  return out;
}

PromptLibrary one_template() {
  PromptLibrary lib;
  lib.add_template({"t", PromptIntent::conversation, "Facts:\n{context}", {}});
  lib.set_distribution({{{"t", 1.0}}});
  return lib;
}

// 10 distinct sentences of exactly 100 characters.
std::vector<std::string> hundred_char_sentences() {
  const char* words[] = {"apple", "bench", "cloud", "daisy", "eagle", "fence", "grape", "heron", "igloo", "jelly"};
  std::vector<std::string> out;
  for (int i = 0; i < 10; ++i) {
    std::string s = std::string("The ") + words[i] + " number " + std::to_string(i) + " rests";
    while (s.size() < 99) s += " " + std::string(words[i]).substr(0, std::min<std::size_t>(5, 99 - s.size() - 1));
    s.resize(99);
    if (s.back() == ' ') s.back() = 'x';
    out.push_back(s + ".");
  }
  return out;
}

Turn turn(const std::string& h, const std::string& a) { return {h, a, "t", 0, 1}; }

}  // namespace

TEST_CASE("stopping criteria") {
  const GenerationParams p;
  CHECK(stopping_criteria(120, 1000, p));
  CHECK_FALSE(stopping_criteria(500, 1000, p));
  CHECK(stopping_criteria(150, 1000, p) == testing::oracle_stop_default(150, 1000));
  for (std::size_t total = 99; total < 400; ++total) CHECK(stopping_criteria(99, total, p));
  for (std::size_t total = 0; total <= 600; total += 3) {
    for (std::size_t rem = 0; rem <= total; ++rem) {
      if (total == 0) {
        CHECK(stopping_criteria(0, 0, p));
        continue;
      }
      CHECK(stopping_criteria(rem, total, p) == testing::oracle_stop_default(rem, total));
    }
  }
}

TEST_CASE("generate_turn retries parse failures") {
  const auto ctx = context_of({"A red car is parked."});
  const auto lib = one_template();
  const GenerationParams p;
  SUBCASE("valid reply") {
    FnModel llm([](const ChatRequest&) { return "Human: <image>\nWhat is parked?\nAssistant: A red car."; });
    const auto t = generate_turn(ctx, lib.get("t"), llm, p, 1);
    CHECK(t.human == "What is parked?");
    CHECK(t.assistant == "A red car.");
    CHECK(t.attempts == 1);
  }
  SUBCASE("garbage three times") {
    FnModel llm([](const ChatRequest&) { return "lorem ipsum"; });
    CHECK_THROWS_AS(generate_turn(ctx, lib.get("t"), llm, p, 1), GenerationFailed);
    CHECK(llm.count("generate") == 3);
  }
  SUBCASE("garbage then valid") {
    int n = 0;
    FnModel llm([&](const ChatRequest&) {
      return ++n == 1 ? std::string("garbage") : std::string("Human: What?\nAssistant: A car.");
    });
    const auto t = generate_turn(ctx, lib.get("t"), llm, p, 1);
    CHECK(t.attempts == 2);
  }
}

TEST_CASE("verify_turn") {
  const auto full = context_of({"A red car is parked."});
  SUBCASE("yes") {
    FnModel llm([](const ChatRequest&) { return "Yes, it is consistent."; });
    CHECK(verify_turn(turn("What is parked?", "A red car."), full, llm, kPrompts));
  }
  SUBCASE("no") {
    FnModel llm([](const ChatRequest&) { return "No. The car is red, not blue."; });
    CHECK_FALSE(verify_turn(turn("What color is the car?", "The car is blue."), full, llm, kPrompts));
  }
  SUBCASE("maybe three times is a failure") {
    FnModel llm([](const ChatRequest&) { return "maybe"; });
    CHECK_FALSE(verify_turn(turn("q", "a"), full, llm, kPrompts));
    CHECK(llm.count("verify") == 3);
  }
}

TEST_CASE("reduction") {
  const std::vector<std::string> facts{
      "A red car is parked on the street.", "A man walks a brown dog.", "The sky is clear and blue.",
      "Two bicycles lean against a fence.", "A cafe has tables outside.", "Pigeons gather near a bench."};
  const auto ctx = context_of(facts);
  SUBCASE("verbatim quote removes that sentence") {
    const auto out = lexical_reduce(ctx, turn("Who is outside?", "A man walks a brown dog."));
    CHECK(out.sentences.size() == 5);
    for (const auto& s : out.sentences) CHECK(s.text != facts[1]);
    CHECK(out.total_chars == ctx.total_chars - text::utf8_length(facts[1]));
  }
  SUBCASE("no shared content words is identity") {
    CHECK(lexical_reduce(ctx, turn("Anything else?", "Nothing whatsoever.")) == ctx);
  }
  SUBCASE("scripted index list equals set difference") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 30; ++trial) {
      std::set<std::size_t> removed;
      for (std::size_t i = 1; i <= facts.size(); ++i)
        if (rng() % 3 == 0) removed.insert(i);
      std::string reply;
      for (auto i : removed) reply += (reply.empty() ? "" : ", ") + std::to_string(i);
      if (reply.empty()) reply = "none";
      FnModel llm([&](const ChatRequest&) { return reply; });
      const auto out = reduce_context(ctx, turn("q", "a"), llm, kPrompts);
      std::vector<std::string> expected;
      for (std::size_t i = 0; i < facts.size(); ++i)
        if (!removed.contains(i + 1)) expected.push_back(facts[i]);
      std::vector<std::string> got;
      for (const auto& s : out.sentences) got.push_back(s.text);
      CHECK(got == expected);
    }
  }
  SUBCASE("unusable reply falls back to lexical") {
    FnModel llm([](const ChatRequest&) { return "I cannot tell."; });
    const auto t = turn("Who is outside?", "A man walks a brown dog.");
    CHECK(reduce_context(ctx, t, llm, kPrompts) == lexical_reduce(ctx, t));
  }
}

TEST_CASE("quality filter tallies match the script") {
  const auto full = context_of({"A red car is parked."});
  std::vector<std::string> script;
  const char* verdicts[] = {"keep", "drop: irrelevant", "Keep, clear.", "DROP", "unsure"};
  for (int i = 0; i < 30; ++i) script.push_back(verdicts[(i * 7) % 5]);
  int kept = 0, dropped = 0, expected_dropped = 0;
  for (const auto& v : script) {
    FnModel llm([&](const ChatRequest&) { return v; });
    const auto q = quality_filter(turn("q", "a"), full, llm, kPrompts);
    (q.keep ? kept : dropped)++;
    CHECK(q.verdict == v);
    if (text::starts_with_icase(v, "drop")) ++expected_dropped;
  }
  CHECK(dropped == expected_dropped);
  CHECK(kept == 30 - expected_dropped);
}

TEST_CASE("generate_conversation loop") {
  const auto lib = one_template();
  GenerationParams p;
  p.reduction_mode = ReductionMode::lexical;

  SUBCASE("turns quoting 30% of the context stop after the simulated count") {
    const auto ctx = context_of(hundred_char_sentences());
    REQUIRE(ctx.total_chars == 1000);
    FnModel llm([](const ChatRequest& r) -> std::string {
      if (r.stage == "verify") return "yes";
      const auto f = shown_facts(r);
      std::string a;
      for (std::size_t i = 0; i < std::min<std::size_t>(3, f.size()); ++i) a += (a.empty() ? "" : " ") + f[i];
      return "Human: What is there?\nAssistant: " + a;
    });
    // Loop arithmetic: remaining drops by 300 per turn until the stop rule fires.
    std::size_t remaining = 1000;
    int expected_turns = 0;
    while (!testing::oracle_stop_default(remaining, 1000)) {
      remaining -= std::min<std::size_t>(300, remaining);
      ++expected_turns;
    }
    const auto conv = generate_conversation(ctx, lib, p, llm, 5);
    CHECK(static_cast<int>(conv.turns.size()) == expected_turns);
    CHECK(conv.provenance.context_chars_final == remaining);
    CHECK(conv.provenance.stop_reason == "threshold");
    CHECK(static_cast<double>(conv.provenance.context_chars_final) / conv.provenance.context_chars_initial < 0.15);
  }
  SUBCASE("80 characters stops immediately") {
    const auto ctx = context_of({"A small context that has well under one hundred characters in it."});
    REQUIRE(ctx.total_chars < 100);
    FnModel llm([](const ChatRequest&) { return "Human: q\nAssistant: a"; });
    CHECK_THROWS_AS(generate_conversation(ctx, lib, p, llm, 1), NoTurnsGenerated);
    CHECK(llm.calls.empty());
  }
  SUBCASE("turns that cover nothing hit the max-turn bound") {
    const auto ctx = context_of(hundred_char_sentences());
    FnModel llm([](const ChatRequest& r) -> std::string {
      if (r.stage == "verify") return "yes";
      return "Human: Hello?\nAssistant: Hi.";
    });
    const auto conv = generate_conversation(ctx, lib, p, llm, 1);
    CHECK(conv.provenance.iterations <= generation_attempt_budget(p));
    CHECK(conv.provenance.iterations == p.max_turns);
    CHECK(conv.provenance.stop_reason == "max_turns");
  }
  SUBCASE("persistent garbage exhausts the budget") {
    const auto ctx = context_of(hundred_char_sentences());
    FnModel llm([](const ChatRequest&) { return "garbage"; });
    CHECK_THROWS_AS(generate_conversation(ctx, lib, p, llm, 1), NoTurnsGenerated);
    CHECK(llm.count("generate") <= generation_attempt_budget(p));
  }
  SUBCASE("rejected turns never appear and attempts stay within three") {
    const auto ctx = context_of(hundred_char_sentences());
    int verify_calls = 0;
    FnModel llm([&](const ChatRequest& r) -> std::string {
      if (r.stage == "verify") return ++verify_calls % 2 ? "no" : "yes";
      const auto f = shown_facts(r);
      return "Human: Tell me.\nAssistant: " + (f.empty() ? std::string("x") : f[0]);
    });
    const auto conv = generate_conversation(ctx, lib, p, llm, 3);
    CHECK(conv.provenance.verification_failures > 0);
    for (const auto& t : conv.turns) CHECK(t.attempts <= 3);
  }
  SUBCASE("context is monotone and the same seed reproduces the conversation") {
    const auto ctx = context_of(hundred_char_sentences());
    FnModel llm([](const ChatRequest& r) { return simulate_reply(r); });
    p.quality_filter = true;
    const auto a = generate_conversation(ctx, lib, p, llm, 77);
    const auto b = generate_conversation(ctx, lib, p, llm, 77);
    CHECK(a == b);
    CHECK(a.provenance.context_chars_final <= a.provenance.context_chars_initial);
    CHECK(a.provenance.quality.size() == a.turns.size() + static_cast<std::size_t>(a.provenance.filtered_turns));
  }
}

TEST_CASE("parameter validation") {
  GenerationParams p;
  CHECK_NOTHROW(p.validate());
  p.reduction_threshold = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.max_retries = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK(parse_reduction_mode("lexical") == ReductionMode::lexical);
  CHECK_THROWS_AS(parse_reduction_mode("magic"), ConfigError);
}
