#include "vig/instruction_gen.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>

#include <fmt/format.h>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace vig {

std::string to_string(ReductionMode mode) {
  return mode == ReductionMode::llm ? "llm" : "lexical";
}

ReductionMode parse_reduction_mode(std::string_view s) {
  if (s == "llm") return ReductionMode::llm;
  if (s == "lexical") return ReductionMode::lexical;
  throw ConfigError(fmt::format("unknown reduction mode '{}'", s));
}

void GenerationParams::validate() const {
  if (!(reduction_threshold > 0 && reduction_threshold < 1)) {
    throw ConfigError(fmt::format("reduction_threshold must be in (0, 1), got {}", reduction_threshold));
  }
  if (min_info_chars == 0) throw ConfigError("min_info_chars must be positive");
  if (max_retries < 1) throw ConfigError("max_retries must be >= 1");
  if (max_turns < 1) throw ConfigError("max_turns must be >= 1");
}

int generation_attempt_budget(const GenerationParams& p) { return p.max_retries * p.max_turns; }

bool stopping_criteria(std::size_t remaining, std::size_t total, const GenerationParams& p) {
  if (remaining < p.min_info_chars) return true;
  if (total == 0) return true;
  // remaining/total < 1 - r_t, written so that 1 - 0.85 rounding cannot move the boundary
  const double consumed = static_cast<double>(total - std::min(remaining, total));
  return consumed > p.reduction_threshold * static_cast<double>(total);
}

bool stopping_criteria(const ContextSet& current, const ContextSet& full,
                       const GenerationParams& p) {
  return stopping_criteria(current.total_chars, full.total_chars, p);
}

std::optional<Turn> try_generate_turn(const ContextSet& shown, const PromptTemplate& t,
                                      ChatModel& llm, std::int64_t seed, int iteration) {
  const auto reply = ask(llm, "generate", std::string(system_prompts::generate), render(t, shown),
                         seed, 0.7);
  const auto pairs = parse_conversation(reply.content);
  if (pairs.empty()) return std::nullopt;
  // The image token is added by the writer; a stray one would duplicate it.
  auto clean = [](std::string s) {
    for (auto pos = s.find("<image>"); pos != std::string::npos; pos = s.find("<image>")) s.erase(pos, 7);
    return text::trim(s);
  };
  Turn turn;
  turn.human = clean(pairs.front().first);
  turn.assistant = clean(pairs.front().second);
  if (turn.human.empty() || turn.assistant.empty()) return std::nullopt;
  turn.template_id = t.template_id;
  turn.iteration = iteration;
  return turn;
}

Turn generate_turn(const ContextSet& shown, const PromptTemplate& t, ChatModel& llm,
                   const GenerationParams& p, std::int64_t seed, int iteration) {
  for (int attempt = 1; attempt <= p.max_retries; ++attempt) {
    const auto s = static_cast<std::int64_t>(text::mix64(static_cast<std::uint64_t>(seed) + attempt));
    if (auto turn = try_generate_turn(shown, t, llm, s, iteration)) {
      turn->attempts = attempt;
      return *turn;
    }
  }
  throw GenerationFailed(fmt::format("no parsable turn from template '{}' after {} attempts",
                                     t.template_id, p.max_retries));
}

namespace {

std::string first_word(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size() && !std::isalpha(static_cast<unsigned char>(reply[i]))) ++i;
  std::string w;
  while (i < reply.size() && std::isalpha(static_cast<unsigned char>(reply[i]))) {
    w += static_cast<char>(std::tolower(static_cast<unsigned char>(reply[i])));
    ++i;
  }
  return w;
}

std::map<std::string, std::string> turn_vars(const Turn& turn, const ContextSet& ctx) {
  return {{"context", numbered_context(ctx)}, {"human", turn.human}, {"assistant", turn.assistant}};
}

ContextSet keep_unless(const ContextSet& current, const std::vector<bool>& remove) {
  ContextSet out;
  out.image = current.image;
  for (std::size_t i = 0; i < current.sentences.size(); ++i) {
    if (!remove[i]) out.sentences.push_back(current.sentences[i]);
  }
  out.recompute_total();
  return out;
}

// Counts calls for provenance without touching the caller's model.
class CountingModel : public ChatModel {
 public:
  explicit CountingModel(ChatModel& inner) : inner_(inner) {}
  ChatResponse chat(const ChatRequest& r) override {
    ++calls;
    return inner_.chat(r);
  }
  int calls = 0;

 private:
  ChatModel& inner_;
};

}  // namespace

bool verify_turn(const Turn& turn, const ContextSet& full, ChatModel& llm, const TaskPrompts& prompts,
                 int max_retries) {
  const auto user = render_text(prompts.verify, turn_vars(turn, full));
  for (int attempt = 0; attempt < std::max(1, max_retries); ++attempt) {
    const auto reply = ask(llm, "verify", std::string(system_prompts::verify), user, attempt, 0.0);
    const auto w = first_word(reply.content);
    if (w == "yes") return true;
    if (w == "no") return false;
  }
  return false;
}

ContextSet lexical_reduce(const ContextSet& current, const Turn& turn) {
  const auto joined = turn.human + "\n" + turn.assistant;
  const auto tw = text::content_words(joined);
  const std::set<std::string> turn_words(tw.begin(), tw.end());
  std::vector<bool> remove(current.sentences.size(), false);
  for (std::size_t i = 0; i < current.sentences.size(); ++i) {
    const auto& s = current.sentences[i].text;
    if (joined.find(s) != std::string::npos) {
      remove[i] = true;
      continue;
    }
    const auto sw = text::content_words(s);
    const std::set<std::string> words(sw.begin(), sw.end());
    if (words.empty()) continue;
    std::size_t shared = 0;
    for (const auto& w : words) shared += turn_words.count(w);
    remove[i] = static_cast<double>(shared) >= 0.6 * static_cast<double>(words.size());
  }
  return keep_unless(current, remove);
}

ContextSet reduce_context(const ContextSet& current, const Turn& turn, ChatModel& llm,
                          const TaskPrompts& prompts, ReductionMode mode) {
  if (mode == ReductionMode::lexical || current.empty()) return lexical_reduce(current, turn);
  const auto reply = ask(llm, "reduce", std::string(system_prompts::reduce),
                         render_text(prompts.reduce, turn_vars(turn, current)), 0, 0.0);
  if (first_word(reply.content) == "none") return current;
  std::vector<bool> remove(current.sentences.size(), false);
  bool any = false;
  const auto& body = reply.content;
  for (std::size_t i = 0; i < body.size();) {
    if (!std::isdigit(static_cast<unsigned char>(body[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < body.size() && std::isdigit(static_cast<unsigned char>(body[j]))) ++j;
    const auto digits = body.substr(i, std::min<std::size_t>(j - i, 9));
    const auto idx = std::stoul(digits);
    if (idx >= 1 && idx <= current.sentences.size()) {
      remove[idx - 1] = true;
      any = true;
    }
    i = j;
  }
  if (!any) return lexical_reduce(current, turn);
  return keep_unless(current, remove);
}

QualityVerdict quality_filter(const Turn& turn, const ContextSet& full, ChatModel& llm,
                              const TaskPrompts& prompts) {
  const auto reply = ask(llm, "quality", std::string(system_prompts::quality),
                         render_text(prompts.quality, turn_vars(turn, full)), 0, 0.0);
  QualityVerdict v;
  v.verdict = text::collapse_whitespace(reply.content);
  v.keep = first_word(reply.content) != "drop";
  return v;
}

Conversation generate_conversation(const ContextSet& full, const PromptLibrary& lib,
                                   const GenerationParams& p, ChatModel& model,
                                   std::uint64_t seed) {
  p.validate();
  CountingModel llm(model);
  Conversation conv;
  conv.image = full.image;
  auto& prov = conv.provenance;
  prov.context_chars_initial = full.total_chars;

  ContextSet current = full;
  std::mt19937_64 rng(seed);
  const int budget = generation_attempt_budget(p);
  int used = 0;

  while (true) {
    if (stopping_criteria(current, full, p)) {
      prov.stop_reason = current.total_chars < p.min_info_chars ? "min_length" : "threshold";
      break;
    }
    if (prov.iterations >= p.max_turns) {
      prov.stop_reason = "max_turns";
      break;
    }
    if (used >= budget) {
      prov.stop_reason = "retry_budget";
      break;
    }
    const int iteration = prov.iterations++;
    const ContextSet& shown = p.reduction ? current : full;
    const PromptTemplate* t = &sample_template(lib, shown, rng);

    std::optional<Turn> accepted;
    int attempts = 0;
    bool rejected = false;
    while (attempts < p.max_retries && used < budget) {
      // After a failed verification the last attempt switches template once.
      if (rejected && attempts == p.max_retries - 1) {
        t = &sample_template(lib, shown, rng, t->template_id);
      }
      ++attempts;
      ++used;
      const auto call_seed = static_cast<std::int64_t>(
          text::mix64(seed ^ text::mix64(static_cast<std::uint64_t>(iteration) * 64 + attempts)) >> 1);
      auto turn = try_generate_turn(shown, *t, llm, call_seed, iteration);
      if (!turn) {
        ++prov.parse_failures;
        continue;
      }
      if (!verify_turn(*turn, full, llm, lib.tasks, p.max_retries)) {
        ++prov.verification_failures;
        rejected = true;
        continue;
      }
      turn->attempts = attempts;
      accepted = std::move(turn);
      break;
    }
    prov.retries_total += std::max(0, attempts - 1);
    if (!accepted) {
      ++prov.abandoned_iterations;
      continue;
    }
    if (p.quality_filter) {
      auto verdict = quality_filter(*accepted, full, llm, lib.tasks);
      const bool keep = verdict.keep;
      prov.quality.push_back(std::move(verdict));
      if (!keep) {
        ++prov.filtered_turns;
        continue;
      }
    }
    current = reduce_context(current, *accepted, llm, lib.tasks, p.reduction_mode);
    prov.templates_used.push_back(accepted->template_id);
    conv.turns.push_back(std::move(*accepted));
  }
  prov.context_chars_final = current.total_chars;
  prov.llm_calls = llm.calls;
  if (conv.turns.empty()) {
    throw NoTurnsGenerated(fmt::format("no turn survived for {} ({}, {} chars)",
                                       full.image.image_id, prov.stop_reason, full.total_chars));
  }
  return conv;
}

}  // namespace vig
