#include "vig/context_builder.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include <fmt/format.h>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace vig {

ContextSentence make_sentence(std::string_view raw, ContextOrigin origin, std::string source) {
  ContextSentence s;
  s.text = text::collapse_whitespace(raw);
  if (s.text.empty()) throw EmptyDescription("context sentence is empty");
  s.origin = origin;
  s.source = std::move(source);
  s.char_len = text::utf8_length(s.text);
  return s;
}

void ContextSet::recompute_total() {
  total_chars = 0;
  for (const auto& s : sentences) total_chars += s.char_len;
}

bool ContextSet::has_origin(ContextOrigin origin) const {
  return std::any_of(sentences.begin(), sentences.end(),
                     [&](const ContextSentence& s) { return s.origin == origin; });
}

std::string fallback_statement(const QAAnnotation& qa) {
  return fmt::format("Regarding '{}', the answer is {}.", text::collapse_whitespace(qa.question),
                     text::collapse_whitespace(qa.answer));
}

namespace {

// Strips list numbering and wrapping quotes from a one-line reply.
std::string clean_statement(std::string_view line) {
  auto s = text::trim(line);
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) s = text::trim(s.substr(i + 1));
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = text::trim(s.substr(1, s.size() - 2));
  return text::collapse_whitespace(s);
}

bool usable_statement(const std::string& s) { return !s.empty() && s.back() != '?'; }

std::string first_line(std::string_view reply) {
  for (const auto& line : text::split_lines(reply)) {
    auto t = text::trim(line);
    if (!t.empty()) return t;
  }
  return {};
}

}  // namespace

ContextSentence qa_to_statement(const QAAnnotation& qa, ChatModel& llm, const TaskPrompts& prompts,
                                int max_retries) {
  const auto user = render_text(prompts.qa_statement, {{"question", text::collapse_whitespace(qa.question)},
                                                       {"answer", text::collapse_whitespace(qa.answer)}});
  for (int attempt = 0; attempt < std::max(1, max_retries); ++attempt) {
    const auto reply = ask(llm, "qa_statement", std::string(system_prompts::qa_statement), user,
                           attempt, 0.2);
    auto statement = clean_statement(first_line(reply.content));
    if (usable_statement(statement)) {
      return make_sentence(statement, ContextOrigin::qa, qa.source);
    }
  }
  return make_sentence(fallback_statement(qa), ContextOrigin::qa, qa.source);
}

std::vector<ContextSentence> qa_to_statements(std::span<const QAAnnotation> qas, ChatModel& llm,
                                              const TaskPrompts& prompts, int max_retries) {
  std::vector<ContextSentence> out;
  if (qas.empty()) return out;
  if (qas.size() == 1) {
    out.push_back(qa_to_statement(qas.front(), llm, prompts, max_retries));
    return out;
  }
  std::string list;
  for (std::size_t i = 0; i < qas.size(); ++i) {
    if (i) list += '\n';
    list += fmt::format("{}. Question: {}\n   Answer: {}", i + 1,
                        text::collapse_whitespace(qas[i].question),
                        text::collapse_whitespace(qas[i].answer));
  }
  const auto reply = ask(llm, "qa_statement", std::string(system_prompts::qa_statement),
                         render_text(prompts.qa_statement_batch, {{"qa_list", list}}), 0, 0.2);
  std::map<std::size_t, std::string> numbered;
  for (const auto& line : text::split_lines(reply.content)) {
    const auto t = text::trim(line);
    std::size_t i = 0;
    while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
    if (i == 0 || i >= t.size() || (t[i] != '.' && t[i] != ')')) continue;
    const auto idx = std::stoul(t.substr(0, i));
    auto statement = clean_statement(t);
    if (idx >= 1 && idx <= qas.size() && usable_statement(statement) && !numbered.contains(idx)) {
      numbered.emplace(idx, std::move(statement));
    }
  }
  for (std::size_t i = 0; i < qas.size(); ++i) {
    if (auto it = numbered.find(i + 1); it != numbered.end()) {
      out.push_back(make_sentence(it->second, ContextOrigin::qa, qas[i].source));
    } else {
      out.push_back(qa_to_statement(qas[i], llm, prompts, max_retries));
    }
  }
  return out;
}

std::vector<ContextSentence> tree_to_description(const std::string& ascii, const ImageRef& image,
                                                 ChatModel& llm, const TaskPrompts& prompts,
                                                 int max_retries, const std::string& source) {
  std::vector<ContextSentence> out;
  if (text::trim(ascii).empty()) return out;
  // Trailing newline of the serializer would leave a blank line before the reply.
  std::string tree = ascii;
  while (!tree.empty() && tree.back() == '\n') tree.pop_back();
  const auto user = render_text(prompts.tree_description,
                                {{"tree", tree}, {"image_size", fmt::format("{}x{}", image.width, image.height)}});
  for (int attempt = 0; attempt < std::max(1, max_retries); ++attempt) {
    const auto reply = ask(llm, "tree_description", std::string(system_prompts::tree_description),
                           user, attempt, 0.2);
    for (auto& s : text::split_sentences(reply.content)) {
      out.push_back(make_sentence(s, ContextOrigin::tree, source));
    }
    if (!out.empty()) return out;
  }
  throw EmptyDescription(fmt::format("no description sentences for {} after {} attempts",
                                     image.image_id, max_retries));
}

std::vector<ContextSentence> boxes_to_sentences(std::span<const BoxAnnotation> boxes) {
  std::vector<ContextSentence> out;
  for (const auto& b : boxes) {
    auto label = text::collapse_whitespace(b.label);
    if (label.empty()) label = "object";
    out.push_back(make_sentence(
        fmt::format("There is a {} at [{:.0f}, {:.0f}, {:.0f}, {:.0f}].", label, b.bbox.x, b.bbox.y,
                    b.bbox.w, b.bbox.h),
        ContextOrigin::tree, b.source));
  }
  return out;
}

ContextSet assemble_context(const MetadataBundle& bundle, const std::string& tree_text,
                            ChatModel& llm, const TaskPrompts& prompts,
                            const ContextOptions& options) {
  ContextSet ctx;
  ctx.image = bundle.image;
  for (const auto& c : bundle.captions) {
    if (text::trim(c.text).empty()) continue;
    ctx.sentences.push_back(make_sentence(c.text, ContextOrigin::caption, c.source));
  }
  if (!bundle.boxes.empty()) {
    if (options.tree_boxes) {
      std::set<std::string> sources;
      for (const auto& b : bundle.boxes) sources.insert(b.source);
      const auto source = fmt::format("{}", fmt::join(sources, ","));
      for (auto& s : tree_to_description(tree_text, bundle.image, llm, prompts,
                                         options.max_retries, source)) {
        ctx.sentences.push_back(std::move(s));
      }
    } else {
      for (auto& s : boxes_to_sentences(bundle.boxes)) ctx.sentences.push_back(std::move(s));
    }
  }
  if (options.batch_qa) {
    for (auto& s : qa_to_statements(bundle.qas, llm, prompts, options.max_retries)) {
      ctx.sentences.push_back(std::move(s));
    }
  } else {
    for (const auto& qa : bundle.qas) {
      ctx.sentences.push_back(qa_to_statement(qa, llm, prompts, options.max_retries));
    }
  }
  ctx.recompute_total();
  return ctx;
}

}  // namespace vig
