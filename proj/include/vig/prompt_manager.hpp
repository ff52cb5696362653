#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vig/context.hpp"

namespace vig {

enum class PromptIntent { conversation, detailed_description, complex_reasoning, custom };

std::string to_string(PromptIntent intent);
PromptIntent parse_prompt_intent(std::string_view s);

struct PromptTemplate {
  std::string template_id;
  PromptIntent intent = PromptIntent::custom;
  std::string body;  // must contain {context}; may contain {image_size}
  std::vector<ContextOrigin> requires_origins;
};

struct PromptDistribution {
  std::vector<std::pair<std::string, double>> entries;
};

// User-message bodies for the non-generation LLM calls.
struct TaskPrompts {
  std::string qa_statement;        // {question} {answer}
  std::string qa_statement_batch;  // {qa_list}
  std::string tree_description;    // {tree} {image_size}
  std::string verify;              // {context} {human} {assistant}
  std::string reduce;              // {context} {human} {assistant}
  std::string quality;             // {context} {human} {assistant}

  static TaskPrompts defaults();
};

// System messages are fixed per stage.
namespace system_prompts {
inline constexpr std::string_view qa_statement =
    "You rewrite question-answer annotations as factual statements about an image.";
inline constexpr std::string_view tree_description =
    "You describe images precisely from structured object annotations.";
inline constexpr std::string_view generate =
    "You write visual instruction-tuning conversations grounded in known image facts.";
inline constexpr std::string_view verify =
    "You check conversation turns against known image facts.";
inline constexpr std::string_view reduce =
    "You track which image facts a conversation has already used.";
inline constexpr std::string_view quality =
    "You review visual instruction-tuning data for clarity and relevance.";
}  // namespace system_prompts

// Templates + distribution + task prompts of one prompt set.
//
// Directory layout: prompts/<set>/<template_id>.txt, prompts/<set>/distribution.json
// and optional prompts/<set>/tasks/<task>.txt overrides. distribution.json maps
// template ids to either a weight or {"weight", "intent", "requires"}.
class PromptLibrary {
 public:
  static PromptLibrary load(const std::filesystem::path& prompts_dir, const std::string& set);
  // The "llava" set compiled in, used when no prompt directory is configured.
  static PromptLibrary builtin();

  void add_template(PromptTemplate t);  // throws PromptError on invalid or duplicate
  void set_distribution(PromptDistribution d);  // throws PromptError when unresolvable

  const PromptTemplate& get(const std::string& template_id) const;
  const std::map<std::string, PromptTemplate>& templates() const { return templates_; }
  const PromptDistribution& distribution() const { return distribution_; }

  TaskPrompts tasks = TaskPrompts::defaults();

 private:
  std::map<std::string, PromptTemplate> templates_;
  PromptDistribution distribution_;
};

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
double uniform01(std::mt19937_64& rng);

bool template_compatible(const PromptTemplate& t, const ContextSet& ctx);

// Weighted draw restricted to templates compatible with ctx. `exclude`
// removes one id from the support when another compatible choice exists.
// Throws NoCompatibleTemplate.
const PromptTemplate& sample_template(const PromptLibrary& lib, const ContextSet& ctx,
                                      std::mt19937_64& rng, std::string_view exclude = {});

// "1. first\n2. second" (no trailing newline).
std::string numbered_context(const ContextSet& ctx);

// Replaces {name} placeholders. Throws UnresolvedPlaceholder when a
// placeholder has no value.
std::string render_text(std::string_view body, const std::map<std::string, std::string>& vars);

// Fills {context} and {image_size}.
std::string render(const PromptTemplate& t, const ContextSet& ctx);

// Pulls (human, assistant) pairs out of free-form LLM output. Markers are
// matched case-insensitively at line start: Human:/Question:/User: then
// Assistant:/Answer:/GPT:. A trailing unanswered human block is dropped.
std::vector<std::pair<std::string, std::string>> parse_conversation(std::string_view raw);

// Canonical "Human: ..\nAssistant: ..\n" form; parse_conversation inverts it.
std::string serialize_conversation(const std::vector<std::pair<std::string, std::string>>& turns);

}  // namespace vig
