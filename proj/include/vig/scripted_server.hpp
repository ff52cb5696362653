#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>

#include "vig/llm_gateway.hpp"

namespace httplib {
class Server;
}

namespace vig {

// What to answer when a request digest has no fixture.
enum class FallbackRule {
  none,            // HTTP 404
  echo_last_user,  // content of the last user message
  simulate,        // deterministic stand-in for every pipeline stage
};

FallbackRule parse_fallback_rule(std::string_view s);

// Deterministic fault injection. Each decision hashes (seed, digest,
// occurrence number of that digest, fault kind), so a repeated request can
// fail first and succeed on retry while the whole run stays reproducible.
struct FaultPlan {
  double http_429_rate = 0;
  double http_500_rate = 0;
  double garbage_generation_rate = 0;   // stage "generate" only
  double reject_verification_rate = 0;  // stage "verify" only
  std::uint64_t seed = 1;
};

struct ScriptedOptions {
  FallbackRule fallback = FallbackRule::simulate;
  int latency_ms = 0;
  FaultPlan faults;
};

struct ScriptedStats {
  std::int64_t requests = 0;
  std::int64_t fixture_hits = 0;
  std::int64_t injected_429 = 0;
  std::int64_t injected_500 = 0;
  std::int64_t injected_garbage = 0;
  std::int64_t injected_rejections = 0;
  std::int64_t not_found = 0;
  int in_flight_high_water = 0;
  std::map<std::string, std::int64_t> by_stage;
};

// Fixture file: JSON Lines of {"digest": str, "response": str}.
std::map<std::string, std::string> load_fixtures(const std::filesystem::path& path);
void save_fixtures(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& fixtures);

// Answers chat-completion bodies from recorded fixtures, an optional custom
// rule, then the fallback rule. Thread-safe.
class ScriptedResponder {
 public:
  using Rule = std::function<std::optional<std::string>(const ChatRequest&)>;

  explicit ScriptedResponder(std::map<std::string, std::string> fixtures = {},
                             ScriptedOptions options = {});

  HttpResult handle(const std::string& body);

  void set_rule(Rule rule);
  void add_fixture(const std::string& digest, std::string response);
  ScriptedStats stats() const;
  const ScriptedOptions& options() const { return options_; }

 private:
  bool roll(const std::string& digest, std::int64_t occurrence, int kind, double rate) const;

  std::map<std::string, std::string> fixtures_;
  ScriptedOptions options_;
  Rule rule_;

  mutable std::mutex mu_;
  std::unordered_map<std::string, std::int64_t> occurrences_;
  ScriptedStats stats_;
  std::atomic<int> in_flight_{0};
};

// Serves a responder over HTTP on 127.0.0.1 (ephemeral port unless given).
class ScriptedServer {
 public:
  explicit ScriptedServer(std::shared_ptr<ScriptedResponder> responder, int port = 0,
                          int threads = 32);
  ~ScriptedServer();
  ScriptedServer(const ScriptedServer&) = delete;
  ScriptedServer& operator=(const ScriptedServer&) = delete;

  int port() const { return port_; }
  std::string url() const;
  ScriptedResponder& responder() { return *responder_; }

 private:
  std::shared_ptr<ScriptedResponder> responder_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

// Calls the responder directly, skipping sockets but not the wire format.
std::unique_ptr<Transport> make_in_process_transport(std::shared_ptr<ScriptedResponder> responder);

// The "simulate" fallback: a deterministic reply for each pipeline stage,
// derived only from the request content and seed.
std::string simulate_reply(const ChatRequest& request);

}  // namespace vig
