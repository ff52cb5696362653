#include "vig/prompt_manager.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace vig {

namespace detail {
const std::map<std::string_view, std::string_view>& builtin_prompt_files();
}

using nlohmann::json;

std::string to_string(ContextOrigin origin) {
  switch (origin) {
    case ContextOrigin::caption: return "caption";
    case ContextOrigin::qa: return "qa";
    case ContextOrigin::tree: return "tree";
  }
  return "caption";
}

ContextOrigin parse_context_origin(std::string_view s) {
  if (s == "caption") return ContextOrigin::caption;
  if (s == "qa") return ContextOrigin::qa;
  if (s == "tree") return ContextOrigin::tree;
  throw PromptError(fmt::format("unknown context origin '{}'", s));
}

std::string to_string(PromptIntent intent) {
  switch (intent) {
    case PromptIntent::conversation: return "conversation";
    case PromptIntent::detailed_description: return "detailed_description";
    case PromptIntent::complex_reasoning: return "complex_reasoning";
    case PromptIntent::custom: return "custom";
  }
  return "custom";
}

PromptIntent parse_prompt_intent(std::string_view s) {
  if (s == "conversation") return PromptIntent::conversation;
  if (s == "detailed_description") return PromptIntent::detailed_description;
  if (s == "complex_reasoning") return PromptIntent::complex_reasoning;
  if (s == "custom") return PromptIntent::custom;
  throw PromptError(fmt::format("unknown prompt intent '{}'", s));
}

namespace {

using FileReader = std::function<std::optional<std::string>(const std::string&)>;

TaskPrompts read_tasks(const FileReader& read, const TaskPrompts& fallback) {
  TaskPrompts t = fallback;
  auto pick = [&](std::string& slot, const char* name) {
    if (auto s = read(fmt::format("tasks/{}.txt", name))) slot = *s;
  };
  pick(t.qa_statement, "qa_statement");
  pick(t.qa_statement_batch, "qa_statement_batch");
  pick(t.tree_description, "tree_description");
  pick(t.verify, "verify");
  pick(t.reduce, "reduce");
  pick(t.quality, "quality");
  return t;
}

PromptLibrary build_library(const FileReader& read, const TaskPrompts& task_fallback,
                            const std::string& where) {
  const auto dist_text = read("distribution.json");
  if (!dist_text) throw PromptError(fmt::format("{}: distribution.json missing", where));
  json dist;
  try {
    dist = json::parse(*dist_text);
  } catch (const json::exception& e) {
    throw PromptError(fmt::format("{}/distribution.json: {}", where, e.what()));
  }
  if (!dist.is_object()) {
    throw PromptError(fmt::format("{}/distribution.json must map template ids to weights", where));
  }
  PromptLibrary lib;
  PromptDistribution d;
  for (const auto& [id, value] : dist.items()) {
    PromptTemplate t;
    t.template_id = id;
    double weight = 0;
    try {
      if (value.is_number()) {
        weight = value.get<double>();
      } else {
        weight = value.at("weight").get<double>();
        t.intent = parse_prompt_intent(value.value("intent", "custom"));
        for (const auto& o : value.value("requires", json::array())) {
          t.requires_origins.push_back(parse_context_origin(o.get<std::string>()));
        }
      }
    } catch (const json::exception& e) {
      throw PromptError(fmt::format("{}/distribution.json entry '{}': {}", where, id, e.what()));
    }
    if (t.intent == PromptIntent::custom && value.is_number()) {
      // Bare weights: infer intent from well-known ids.
      try {
        t.intent = parse_prompt_intent(id);
      } catch (const PromptError&) {
      }
    }
    const auto body = read(id + ".txt");
    if (!body) throw PromptError(fmt::format("{}: template file '{}.txt' missing", where, id));
    t.body = *body;
    lib.add_template(std::move(t));
    d.entries.emplace_back(id, weight);
  }
  lib.set_distribution(std::move(d));
  lib.tasks = read_tasks(read, task_fallback);
  return lib;
}

}  // namespace

TaskPrompts TaskPrompts::defaults() {
  const auto& files = detail::builtin_prompt_files();
  auto get = [&](const char* name) {
    auto it = files.find(fmt::format("tasks/{}.txt", name));
    return it == files.end() ? std::string() : std::string(it->second);
  };
  TaskPrompts t;
  t.qa_statement = get("qa_statement");
  t.qa_statement_batch = get("qa_statement_batch");
  t.tree_description = get("tree_description");
  t.verify = get("verify");
  t.reduce = get("reduce");
  t.quality = get("quality");
  return t;
}

PromptLibrary PromptLibrary::builtin() {
  const auto& files = detail::builtin_prompt_files();
  return build_library(
      [&](const std::string& rel) -> std::optional<std::string> {
        auto it = files.find(rel);
        if (it == files.end()) return std::nullopt;
        return std::string(it->second);
      },
      TaskPrompts::defaults(), "<builtin>");
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& prompts_dir,
                                  const std::string& set) {
  const auto root = prompts_dir / set;
  if (!std::filesystem::is_directory(root)) {
    throw PromptError(fmt::format("prompt set directory '{}' not found", root.string()));
  }
  return build_library(
      [&](const std::string& rel) -> std::optional<std::string> {
        std::ifstream in(root / rel);
        if (!in) return std::nullopt;
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
      },
      TaskPrompts::defaults(), root.string());
}

void PromptLibrary::add_template(PromptTemplate t) {
  if (t.template_id.empty()) throw PromptError("template without id");
  if (t.body.find("{context}") == std::string::npos) {
    throw PromptError(fmt::format("template '{}' has no {{context}} placeholder", t.template_id));
  }
  if (templates_.contains(t.template_id)) {
    throw PromptError(fmt::format("duplicate template id '{}'", t.template_id));
  }
  templates_.emplace(t.template_id, std::move(t));
}

void PromptLibrary::set_distribution(PromptDistribution d) {
  double total = 0;
  for (const auto& [id, w] : d.entries) {
    if (!templates_.contains(id)) {
      throw PromptError(fmt::format("distribution references unknown template '{}'", id));
    }
    if (!(w > 0)) throw PromptError(fmt::format("template '{}' weight must be > 0", id));
    total += w;
  }
  if (!(total > 0)) throw PromptError("prompt distribution has no positive weight");
  distribution_ = std::move(d);
}

const PromptTemplate& PromptLibrary::get(const std::string& template_id) const {
  auto it = templates_.find(template_id);
  if (it == templates_.end()) throw PromptError(fmt::format("unknown template '{}'", template_id));
  return it->second;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

bool template_compatible(const PromptTemplate& t, const ContextSet& ctx) {
  return std::all_of(t.requires_origins.begin(), t.requires_origins.end(),
                     [&](ContextOrigin o) { return ctx.has_origin(o); });
}

const PromptTemplate& sample_template(const PromptLibrary& lib, const ContextSet& ctx,
                                      std::mt19937_64& rng, std::string_view exclude) {
  std::vector<std::pair<const PromptTemplate*, double>> support;
  for (const auto& [id, w] : lib.distribution().entries) {
    const auto& t = lib.get(id);
    if (template_compatible(t, ctx)) support.emplace_back(&t, w);
  }
  if (support.empty()) {
    throw NoCompatibleTemplate("no prompt template is compatible with the available context");
  }
  if (!exclude.empty() && support.size() > 1) {
    std::erase_if(support, [&](const auto& e) { return e.first->template_id == exclude; });
  }
  double total = 0;
  for (const auto& e : support) total += e.second;
  double u = uniform01(rng) * total;
  for (const auto& e : support) {
    if (u < e.second) return *e.first;
    u -= e.second;
  }
  return *support.back().first;
}

std::string numbered_context(const ContextSet& ctx) {
  std::string out;
  for (std::size_t i = 0; i < ctx.sentences.size(); ++i) {
    if (i) out.push_back('\n');
    out += fmt::format("{}. {}", i + 1, ctx.sentences[i].text);
  }
  return out;
}

std::string render_text(std::string_view body, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(body.size());
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      std::size_t j = i + 1;
      while (j < body.size() && (std::islower(static_cast<unsigned char>(body[j])) || body[j] == '_')) ++j;
      if (j < body.size() && body[j] == '}' && j > i + 1) {
        const std::string name(body.substr(i + 1, j - i - 1));
        auto it = vars.find(name);
        if (it == vars.end()) {
          throw UnresolvedPlaceholder(fmt::format("no value for placeholder {{{}}}", name));
        }
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(body[i++]);
  }
  return out;
}

std::string render(const PromptTemplate& t, const ContextSet& ctx) {
  return render_text(t.body,
                     {{"context", numbered_context(ctx)},
                      {"image_size", fmt::format("{}x{}", ctx.image.width, ctx.image.height)}});
}

namespace {

enum class Speaker { none, human, assistant };

constexpr std::string_view kHumanMarkers[] = {"human:", "question:", "user:"};
constexpr std::string_view kAssistantMarkers[] = {"assistant:", "answer:", "gpt:"};

// Returns the speaker and the text after the marker.
std::pair<Speaker, std::string_view> match_marker(std::string_view line) {
  for (auto m : kHumanMarkers) {
    if (text::starts_with_icase(line, m)) return {Speaker::human, line.substr(m.size())};
  }
  for (auto m : kAssistantMarkers) {
    if (text::starts_with_icase(line, m)) return {Speaker::assistant, line.substr(m.size())};
  }
  return {Speaker::none, line};
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_conversation(std::string_view raw) {
  struct Block {
    Speaker who;
    std::string text;
  };
  std::vector<Block> blocks;
  for (const auto& line : text::split_lines(raw)) {
    auto [who, rest] = match_marker(line);
    if (who != Speaker::none) {
      blocks.push_back({who, std::string(rest)});
    } else if (!blocks.empty()) {
      blocks.back().text += '\n';
      blocks.back().text += line;
    }
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  std::optional<std::string> pending_human;
  for (auto& b : blocks) {
    auto value = text::trim(b.text);
    if (b.who == Speaker::human) {
      pending_human = value.empty() ? std::nullopt : std::optional<std::string>(std::move(value));
      continue;
    }
    if (pending_human && !value.empty()) pairs.emplace_back(std::move(*pending_human), std::move(value));
    pending_human.reset();
  }
  return pairs;
}

std::string serialize_conversation(const std::vector<std::pair<std::string, std::string>>& turns) {
  std::string out;
  for (const auto& [h, a] : turns) {
    out += "Human: " + h + "\nAssistant: " + a + "\n";
  }
  return out;
}

}  // namespace vig
