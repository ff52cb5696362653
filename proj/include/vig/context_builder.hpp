#pragma once

#include <span>
#include <string>
#include <vector>

#include "vig/context.hpp"
#include "vig/llm_gateway.hpp"
#include "vig/metadata.hpp"
#include "vig/prompt_manager.hpp"

namespace vig {

struct ContextOptions {
  int max_retries = 3;       // LLM attempts per conversion before falling back
  bool batch_qa = true;      // one numbered request per image for all QA pairs
  bool tree_boxes = true;    // false: boxes become plain concatenated sentences
};

// Used when the LLM never returns a usable statement.
std::string fallback_statement(const QAAnnotation& qa);

// One declarative sentence for one QA pair. Malformed replies (empty, or
// still a question) are retried, then replaced by fallback_statement.
// LlmUnavailable propagates.
ContextSentence qa_to_statement(const QAAnnotation& qa, ChatModel& llm, const TaskPrompts& prompts,
                                int max_retries);

// Batched form: a single numbered request; items the reply does not cover
// are converted one by one. Output is aligned with the input.
std::vector<ContextSentence> qa_to_statements(std::span<const QAAnnotation> qas, ChatModel& llm,
                                              const TaskPrompts& prompts, int max_retries);

// LLM prose for an ASCII scene tree, split into sentences. Empty tree -> {}.
// Throws EmptyDescription when no sentence comes back within max_retries.
std::vector<ContextSentence> tree_to_description(const std::string& ascii, const ImageRef& image,
                                                 ChatModel& llm, const TaskPrompts& prompts,
                                                 int max_retries, const std::string& source);

// Baseline without the tree: "There is a <label> at [x, y, w, h]." per box.
std::vector<ContextSentence> boxes_to_sentences(std::span<const BoxAnnotation> boxes);

// Captions verbatim, then tree (or box) sentences, then QA statements.
ContextSet assemble_context(const MetadataBundle& bundle, const std::string& tree_text,
                            ChatModel& llm, const TaskPrompts& prompts,
                            const ContextOptions& options = {});

}  // namespace vig
