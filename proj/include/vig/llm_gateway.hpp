#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace vig {

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;  // empty: gateway default
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;
  // Pipeline stage for usage accounting; sent as metadata.stage.
  std::string stage;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ChatResponse {
  std::string content;
  TokenUsage usage;
  std::int64_t latency_ms = 0;
  int retries = 0;  // transport retries spent on this call
};

// Anything that answers chat requests. The gateway is the production
// implementation; tests substitute scripted models.
class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual ChatResponse chat(const ChatRequest& request) = 0;
};

// Throws ProtocolError on invalid requests (empty messages, bad first role).
void validate_request(const ChatRequest& request);

nlohmann::json request_to_json(const ChatRequest& request, const std::string& default_model);
ChatRequest request_from_json(const nlohmann::json& body);

// FNV-1a over message contents joined by 0x1F, as 16 hex characters.
// Sampling parameters are deliberately excluded.
std::string request_digest(const std::vector<ChatMessage>& messages);

// Reply body of a chat-completion server; throws ProtocolError when malformed.
ChatResponse parse_chat_completion(const std::string& body);
std::string make_chat_completion(const std::string& content, const TokenUsage& usage,
                                 const std::string& model);

struct HttpResult {
  int status = 0;           // 0 when the connection failed
  std::string body;
  std::string error;        // transport error text when status == 0
};

// One POST of a JSON body to the completion route.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResult post(const std::string& body) = 0;
  // Cheap reachability probe used at startup in live mode.
  virtual bool reachable() { return true; }
};

std::unique_ptr<Transport> make_http_transport(const std::string& endpoint_url,
                                               const std::string& api_key, int timeout_ms);

enum class GatewayMode { live, scripted };

struct GatewayConfig {
  std::string endpoint_url = "http://127.0.0.1:8000";
  std::string api_key;
  std::string model = "default";
  int max_in_flight = 8;
  int retry_budget = 4;
  int backoff_base_ms = 200;
  int backoff_max_ms = 10000;
  int timeout_ms = 120000;
  GatewayMode mode = GatewayMode::live;
};

struct StageUsage {
  std::int64_t requests = 0;
  std::int64_t failures = 0;
  std::int64_t retries = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t latency_ms = 0;
};

struct GatewayMetrics {
  std::map<std::string, StageUsage> stages;
  int in_flight_high_water = 0;
  std::vector<int> backoff_delays_ms;  // last request's schedule, for inspection
};

// Bounded-concurrency, retrying chat client. Safe for concurrent callers;
// callers block while max_in_flight requests are outstanding.
class Gateway : public ChatModel {
 public:
  Gateway(GatewayConfig config, std::unique_ptr<Transport> transport);

  ChatResponse chat(const ChatRequest& request) override;

  GatewayMetrics metrics() const;
  const GatewayConfig& config() const { return config_; }
  bool reachable() { return transport_->reachable(); }

  // Delay before retry number `attempt` (1-based): base * 2^(attempt-1), capped.
  static int backoff_delay_ms(const GatewayConfig& cfg, int attempt);

 private:
  void acquire();
  void release();
  void record(const std::string& stage, const StageUsage& delta);

  GatewayConfig config_;
  std::unique_ptr<Transport> transport_;

  mutable std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;
  int high_water_ = 0;

  mutable std::mutex metrics_mu_;
  std::map<std::string, StageUsage> stages_;
  std::vector<int> last_backoff_;
};

// Helper for the pipeline stages: one system + one user message.
ChatResponse ask(ChatModel& model, const std::string& stage, const std::string& system,
                 const std::string& user, std::optional<std::int64_t> seed = std::nullopt,
                 double temperature = 0.7);

}  // namespace vig
