#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vig/context.hpp"
#include "vig/llm_gateway.hpp"
#include "vig/prompt_manager.hpp"

namespace vig {

enum class ReductionMode { llm, lexical };

std::string to_string(ReductionMode mode);
ReductionMode parse_reduction_mode(std::string_view s);

struct GenerationParams {
  double reduction_threshold = 0.85;  // r_t
  std::size_t min_info_chars = 100;   // l_min
  int max_retries = 3;                // generation attempts per turn
  int max_turns = 12;
  bool quality_filter = false;
  // false: the prompt always shows the full context ("Direct Generation");
  // covered sentences are still tracked for the stopping criterion.
  bool reduction = true;
  ReductionMode reduction_mode = ReductionMode::llm;

  void validate() const;  // throws ConfigError
};

struct Turn {
  std::string human;
  std::string assistant;
  std::string template_id;
  int iteration = 0;
  int attempts = 1;  // generation attempts spent, the accepted one included

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct QualityVerdict {
  bool keep = true;
  std::string verdict;

  friend bool operator==(const QualityVerdict&, const QualityVerdict&) = default;
};

struct ConversationProvenance {
  std::size_t context_chars_initial = 0;
  std::size_t context_chars_final = 0;
  std::vector<std::string> templates_used;  // per emitted turn
  int retries_total = 0;                    // generation attempts beyond the first, all turns
  int filtered_turns = 0;
  int verification_failures = 0;
  int parse_failures = 0;
  int abandoned_iterations = 0;
  int iterations = 0;
  int llm_calls = 0;
  std::vector<QualityVerdict> quality;  // one per turn that reached the filter
  std::string stop_reason;  // threshold | min_length | max_turns | retry_budget

  friend bool operator==(const ConversationProvenance&, const ConversationProvenance&) = default;
};

struct Conversation {
  ImageRef image;
  std::vector<Turn> turns;
  ConversationProvenance provenance;

  friend bool operator==(const Conversation&, const Conversation&) = default;
};

// remaining / total < 1 - r_t, or remaining < l_min.
bool stopping_criteria(std::size_t remaining, std::size_t total, const GenerationParams& p);
bool stopping_criteria(const ContextSet& current, const ContextSet& full,
                       const GenerationParams& p);

// One generation call; nullopt when the reply holds no complete turn.
std::optional<Turn> try_generate_turn(const ContextSet& shown, const PromptTemplate& t,
                                      ChatModel& llm, std::int64_t seed, int iteration);

// Up to p.max_retries attempts; throws GenerationFailed when none parses.
Turn generate_turn(const ContextSet& shown, const PromptTemplate& t, ChatModel& llm,
                   const GenerationParams& p, std::int64_t seed, int iteration = 0);

// "yes"/"no" as the first word, case-insensitive. Anything else is asked
// again up to max_retries times, then counts as a failed verification.
bool verify_turn(const Turn& turn, const ContextSet& full, ChatModel& llm, const TaskPrompts& prompts,
                 int max_retries = 3);

// Sentences of `current` whose content words overlap the turn's by at
// least 0.6, or that the turn quotes verbatim, are removed.
ContextSet lexical_reduce(const ContextSet& current, const Turn& turn);

// Indices listed by the LLM are removed; "none" removes nothing; a reply
// with no usable index falls back to lexical_reduce. Output is a subset.
ContextSet reduce_context(const ContextSet& current, const Turn& turn, ChatModel& llm,
                          const TaskPrompts& prompts, ReductionMode mode = ReductionMode::llm);

// "keep" or "drop..." as the first word; anything else keeps the turn.
QualityVerdict quality_filter(const Turn& turn, const ContextSet& full, ChatModel& llm,
                              const TaskPrompts& prompts);

// Generation loop: sample, generate, verify, append, reduce. Throws NoTurnsGenerated when nothing survives.
Conversation generate_conversation(const ContextSet& full, const PromptLibrary& lib,
                                   const GenerationParams& p, ChatModel& llm,
                                   std::uint64_t seed);

// Upper bound on loop iterations and on generation attempts.
int generation_attempt_budget(const GenerationParams& p);

}  // namespace vig
