#include <algorithm>
#include <cctype>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "vig/scripted_server.hpp"
#include "vig/text.hpp"

namespace vig {

namespace {

std::string last_user(const ChatRequest& req) {
  for (auto it = req.messages.rbegin(); it != req.messages.rend(); ++it) {
    if (it->role == "user") return it->content;
  }
  return {};
}

std::string strip_final_punct(std::string s) {
  while (!s.empty() && (s.back() == '.' || s.back() == '?' || s.back() == '!')) s.pop_back();
  return text::trim(s);
}

std::string answer_sentence(const std::string& q, const std::string& a) {
  return fmt::format("The answer to \"{}\" is {}.", strip_final_punct(q), strip_final_punct(a));
}

std::string after_prefix(const std::string& line, std::string_view prefix) {
  const auto t = text::trim(line);
  if (!text::starts_with_icase(t, prefix)) return {};
  return text::trim(std::string_view(t).substr(prefix.size()));
}

std::string qa_single(const std::string& user) {
  std::string q, a;
  for (const auto& line : text::split_lines(user)) {
    if (auto v = after_prefix(line, "Question:"); !v.empty() && q.empty()) q = v;
    else if (auto w = after_prefix(line, "Answer:"); !w.empty() && a.empty()) a = w;
  }
  if (q.empty() || a.empty()) return {};
  return answer_sentence(q, a);
}

std::string qa_batch(const std::string& user) {
  static const std::regex question(R"(^\s*(\d+)\.\s*Question:\s*(.*)$)");
  std::string out;
  std::string index, q;
  for (const auto& line : text::split_lines(user)) {
    std::smatch m;
    if (std::regex_match(line, m, question)) {
      index = m[1];
      q = text::trim(m[2].str());
      continue;
    }
    if (auto a = after_prefix(line, "Answer:"); !a.empty() && !index.empty()) {
      if (!out.empty()) out += '\n';
      out += fmt::format("{}. {}", index, answer_sentence(q, a));
      index.clear();
    }
  }
  return out;
}

std::string article(const std::string& phrase) {
  if (phrase.empty()) return "a";
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(phrase[0])));
  return std::string("aeiou").find(c) != std::string::npos ? "an" : "a";
}

std::string where(const std::string& pos) {
  return pos == "center" ? "near the center of the image" : fmt::format("at the {} of the image", pos);
}

std::string attr_words(const std::string& attrs) {
  std::string out;
  for (const auto& a : text::split_lines(std::regex_replace(attrs, std::regex(",\\s*"), "\n"))) {
    const auto t = text::trim(a);
    if (t.empty()) continue;
    out += t;
    out += ' ';
  }
  return out;
}

std::string tree_description(const std::string& user) {
  static const std::regex node(
      R"(^( *)(.+?)(?: \(([^()]*)\))? at \((-?\d+), (-?\d+)\) \[([a-z ]+)\], size (\d+)x(\d+)(?:, depth [0-9.]+)?$)");
  static const std::regex group(
      R"(^( *)(\S+) (.+?)(?: \(([^()]*)\))? around \((-?\d+), (-?\d+)\) \[([a-z ]+)\], avg size (\d+)x(\d+)(?:, depth [0-9.]+)?$)");
  const auto lines = text::split_lines(user);
  auto it = std::find_if(lines.begin(), lines.end(),
                         [](const std::string& l) { return text::trim(l) == "Scene tree:"; });
  if (it == lines.end()) return {};
  struct Open {
    std::size_t indent;
    std::string label;
    bool group;
  };
  std::vector<Open> stack;
  std::string out;
  for (++it; it != lines.end(); ++it) {
    const auto& line = *it;
    if (text::trim(line).empty()) continue;
    std::smatch m;
    std::string sentence, label;
    std::size_t indent = 0;
    bool is_group = false;
    if (std::regex_match(line, m, group)) {
      is_group = true;
      indent = m[1].length();
      label = m[3];
      sentence = fmt::format("There are {} {}{} {}", m[2].str(), attr_words(m[4]), label, where(m[7]));
    } else if (std::regex_match(line, m, node)) {
      indent = m[1].length();
      label = m[2];
      const auto described = attr_words(m[3]) + label;
      sentence = fmt::format("There is {} {} {}", article(described), described, where(m[6]));
    } else {
      continue;
    }
    while (!stack.empty() && stack.back().indent >= indent) stack.pop_back();
    // Members listed under a group belong to the group's container.
    auto parent = std::find_if(stack.rbegin(), stack.rend(), [](const Open& o) { return !o.group; });
    if (parent != stack.rend()) sentence += fmt::format(", within the {}", parent->label);
    sentence += '.';
    stack.push_back({indent, label, is_group});
    if (!out.empty()) out += ' ';
    out += sentence;
  }
  return out;
}

// Numbered "N. text" lines, optionally only those before `stop_marker`.
std::vector<std::string> numbered_lines(const std::string& user, std::string_view stop_marker = {}) {
  static const std::regex numbered(R"(^(\d+)\. (.+)$)");
  std::vector<std::string> out;
  for (const auto& line : text::split_lines(user)) {
    if (!stop_marker.empty() && text::trim(line) == stop_marker) break;
    std::smatch m;
    if (std::regex_match(line, m, numbered)) out.push_back(m[2]);
  }
  return out;
}

std::string generate(const ChatRequest& req, const std::string& user) {
  const auto facts = numbered_lines(user);
  if (facts.empty()) return "Human: What is shown in the image?\nAssistant: I cannot tell.";
  const std::uint64_t seed = req.seed ? static_cast<std::uint64_t>(*req.seed)
                                      : text::fnv1a64(request_digest(req.messages));
  const std::size_t n = facts.size();
  const std::size_t start = static_cast<std::size_t>(seed % n);
  std::string answer = facts[start];
  if (n >= 2) answer += " " + facts[(start + 1) % n];
  static const std::set<std::string> descriptive{"red", "blue", "green", "white", "black", "yellow",
                                                 "brown", "gray", "answer", "photo", "image"};
  std::string topic = "scene";
  for (const auto& w : text::content_words(facts[start])) {
    if (!descriptive.contains(w)) {
      topic = w;
      break;
    }
  }
  return fmt::format("Human: What can you tell me about the {}?\nAssistant: {}", topic, answer);
}

std::string reduce(const std::string& user) {
  const auto facts = numbered_lines(user, "Conversation turn:");
  const auto marker = user.find("Conversation turn:");
  if (marker == std::string::npos) return "none";
  auto turn = user.substr(marker + std::string_view("Conversation turn:").size());
  if (const auto tail = turn.rfind("\n\n"); tail != std::string::npos) turn.resize(tail);
  const auto turn_words = text::content_words(turn);
  const std::set<std::string> turn_set(turn_words.begin(), turn_words.end());
  std::vector<std::string> hits;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    bool covered = turn.find(facts[i]) != std::string::npos;
    if (!covered) {
      const auto w = text::content_words(facts[i]);
      const std::set<std::string> ws(w.begin(), w.end());
      std::size_t shared = 0;
      for (const auto& x : ws) shared += turn_set.count(x);
      covered = !ws.empty() && static_cast<double>(shared) >= 0.6 * static_cast<double>(ws.size());
    }
    if (covered) hits.push_back(std::to_string(i + 1));
  }
  if (hits.empty()) return "none";
  return fmt::format("{}", fmt::join(hits, ", "));
}

}  // namespace

std::string simulate_reply(const ChatRequest& req) {
  const auto user = last_user(req);
  const auto& stage = req.stage;
  if (stage == "qa_statement") {
    if (user.find("numbered question-answer") != std::string::npos) return qa_batch(user);
    return qa_single(user);
  }
  if (stage == "tree_description") return tree_description(user);
  if (stage == "generate") return generate(req, user);
  if (stage == "verify") return "yes";
  if (stage == "quality") return "keep";
  if (stage == "reduce") return reduce(user);
  return user;
}

}  // namespace vig
