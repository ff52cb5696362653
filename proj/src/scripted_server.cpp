#include "vig/scripted_server.hpp"

#include <chrono>
#include <fstream>

#include <fmt/format.h>
#include <httplib.h>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace vig {

using nlohmann::json;

FallbackRule parse_fallback_rule(std::string_view s) {
  if (s == "none") return FallbackRule::none;
  if (s == "echo-last-user" || s == "echo_last_user") return FallbackRule::echo_last_user;
  if (s == "simulate") return FallbackRule::simulate;
  throw ConfigError(fmt::format("unknown fallback rule '{}'", s));
}

std::map<std::string, std::string> load_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open fixture file '{}'", path.string()));
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      out[j.at("digest").get<std::string>()] = j.at("response").get<std::string>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

void save_fixtures(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& fixtures) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write fixture file '{}'", path.string()));
  for (const auto& [digest, response] : fixtures) {
    out << json{{"digest", digest}, {"response", response}}.dump() << '\n';
  }
}

ScriptedResponder::ScriptedResponder(std::map<std::string, std::string> fixtures,
                                     ScriptedOptions options)
    : fixtures_(std::move(fixtures)), options_(options) {}

void ScriptedResponder::set_rule(Rule rule) {
  std::lock_guard lock(mu_);
  rule_ = std::move(rule);
}

void ScriptedResponder::add_fixture(const std::string& digest, std::string response) {
  std::lock_guard lock(mu_);
  fixtures_[digest] = std::move(response);
}

ScriptedStats ScriptedResponder::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

bool ScriptedResponder::roll(const std::string& digest, std::int64_t occurrence, int kind,
                             double rate) const {
  if (rate <= 0) return false;
  std::uint64_t h = text::fnv1a64(digest, options_.faults.seed * 0x9e3779b97f4a7c15ULL + 1);
  h = text::mix64(h ^ (static_cast<std::uint64_t>(occurrence) << 8) ^ static_cast<std::uint64_t>(kind));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < rate;
}

namespace {

std::int64_t word_count(std::string_view s) {
  std::int64_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

HttpResult error_body(int status, const std::string& message) {
  return HttpResult{status, json{{"error", {{"message", message}, {"code", status}}}}.dump(), ""};
}

}  // namespace

HttpResult ScriptedResponder::handle(const std::string& body) {
  ChatRequest req;
  try {
    req = request_from_json(json::parse(body));
    validate_request(req);
  } catch (const std::exception& e) {
    return error_body(400, e.what());
  }
  const auto digest = request_digest(req.messages);

  const int now = ++in_flight_;
  struct Leave {
    std::atomic<int>& c;
    ~Leave() { --c; }
  } leave{in_flight_};

  std::int64_t occurrence = 0;
  Rule rule;
  std::optional<std::string> fixture;
  {
    std::lock_guard lock(mu_);
    occurrence = ++occurrences_[digest];
    ++stats_.requests;
    ++stats_.by_stage[req.stage.empty() ? "other" : req.stage];
    stats_.in_flight_high_water = std::max(stats_.in_flight_high_water, now);
    if (auto it = fixtures_.find(digest); it != fixtures_.end()) fixture = it->second;
    rule = rule_;
  }

  if (options_.latency_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(options_.latency_ms));
  }

  const auto& faults = options_.faults;
  if (roll(digest, occurrence, 1, faults.http_429_rate)) {
    std::lock_guard lock(mu_);
    ++stats_.injected_429;
    return error_body(429, "rate limited (injected)");
  }
  if (roll(digest, occurrence, 2, faults.http_500_rate)) {
    std::lock_guard lock(mu_);
    ++stats_.injected_500;
    return error_body(500, "internal error (injected)");
  }

  std::optional<std::string> content;
  if (fixture) {
    content = fixture;
    std::lock_guard lock(mu_);
    ++stats_.fixture_hits;
  } else if (rule) {
    content = rule(req);
  }
  if (!content) {
    switch (options_.fallback) {
      case FallbackRule::none:
        break;
      case FallbackRule::echo_last_user:
        for (auto it = req.messages.rbegin(); it != req.messages.rend(); ++it) {
          if (it->role == "user") {
            content = it->content;
            break;
          }
        }
        break;
      case FallbackRule::simulate:
        content = simulate_reply(req);
        break;
    }
  }
  if (!content) {
    std::lock_guard lock(mu_);
    ++stats_.not_found;
    return error_body(404, fmt::format("no fixture for digest {}", digest));
  }

  if (req.stage == "generate" && roll(digest, occurrence, 3, faults.garbage_generation_rate)) {
    std::lock_guard lock(mu_);
    ++stats_.injected_garbage;
    content = "I am sorry, but I cannot produce that conversation right now.";
  } else if (req.stage == "verify" &&
             roll(digest, occurrence, 4, faults.reject_verification_rate)) {
    std::lock_guard lock(mu_);
    ++stats_.injected_rejections;
    content = "no";
  }

  std::int64_t prompt_words = 0;
  for (const auto& m : req.messages) prompt_words += word_count(m.content);
  TokenUsage usage{prompt_words, word_count(*content)};
  return HttpResult{200, make_chat_completion(*content, usage, req.model), ""};
}

ScriptedServer::ScriptedServer(std::shared_ptr<ScriptedResponder> responder, int port,
                               int threads)
    : responder_(std::move(responder)), server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(std::max(threads, 1)));
  };
  auto* r = responder_.get();
  server_->Post("/v1/chat/completions", [r](const httplib::Request& req, httplib::Response& res) {
    const auto out = r->handle(req.body);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  });
  server_->Get("/v1/models", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"object":"list","data":[{"id":"scripted","object":"model"}]})",
                    "application/json");
  });
  if (port == 0) {
    port_ = server_->bind_to_any_port("127.0.0.1");
  } else if (server_->bind_to_port("127.0.0.1", port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) throw IoError("scripted server could not bind a port");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

ScriptedServer::~ScriptedServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string ScriptedServer::url() const { return fmt::format("http://127.0.0.1:{}", port_); }

namespace {

class InProcessTransport : public Transport {
 public:
  explicit InProcessTransport(std::shared_ptr<ScriptedResponder> r) : responder_(std::move(r)) {}
  HttpResult post(const std::string& body) override { return responder_->handle(body); }

 private:
  std::shared_ptr<ScriptedResponder> responder_;
};

}  // namespace

std::unique_ptr<Transport> make_in_process_transport(std::shared_ptr<ScriptedResponder> responder) {
  return std::make_unique<InProcessTransport>(std::move(responder));
}

}  // namespace vig
