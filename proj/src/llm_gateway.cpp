#include "vig/llm_gateway.hpp"

#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace vig {

using nlohmann::json;

void validate_request(const ChatRequest& request) {
  if (request.messages.empty()) throw ProtocolError("chat request without messages");
  const auto& first = request.messages.front().role;
  if (first != "system" && first != "user") {
    throw ProtocolError(fmt::format("first message role must be system or user, got '{}'", first));
  }
  for (const auto& m : request.messages) {
    if (m.role != "system" && m.role != "user" && m.role != "assistant") {
      throw ProtocolError(fmt::format("invalid message role '{}'", m.role));
    }
  }
  if (request.temperature < 0) throw ProtocolError("temperature must be >= 0");
  if (request.max_tokens <= 0) throw ProtocolError("max_tokens must be > 0");
}

json request_to_json(const ChatRequest& request, const std::string& default_model) {
  json j;
  j["model"] = request.model.empty() ? default_model : request.model;
  j["messages"] = json::array();
  for (const auto& m : request.messages) {
    j["messages"].push_back({{"role", m.role}, {"content", m.content}});
  }
  j["temperature"] = request.temperature;
  j["max_tokens"] = request.max_tokens;
  if (request.seed) j["seed"] = *request.seed;
  if (!request.stage.empty()) j["metadata"] = {{"stage", request.stage}};
  return j;
}

ChatRequest request_from_json(const json& body) {
  ChatRequest r;
  try {
    r.model = body.value("model", "");
    for (const auto& m : body.at("messages")) {
      r.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    }
    r.temperature = body.value("temperature", 0.7);
    r.max_tokens = body.value("max_tokens", 1024);
    if (auto it = body.find("seed"); it != body.end() && it->is_number_integer()) {
      r.seed = it->get<std::int64_t>();
    }
    if (auto it = body.find("metadata"); it != body.end() && it->is_object()) {
      r.stage = it->value("stage", "");
    }
  } catch (const json::exception& e) {
    throw ProtocolError(fmt::format("malformed chat request: {}", e.what()));
  }
  return r;
}

std::string request_digest(const std::vector<ChatMessage>& messages) {
  std::string joined;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i) joined.push_back('\x1f');
    joined += messages[i].content;
  }
  return text::hex64(text::fnv1a64(joined));
}

ChatResponse parse_chat_completion(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(fmt::format("response is not JSON: {}", e.what()));
  }
  ChatResponse r;
  try {
    const auto& choices = j.at("choices");
    if (!choices.is_array() || choices.empty()) throw ProtocolError("response has no choices");
    const auto& content = choices.at(0).at("message").at("content");
    r.content = content.is_null() ? std::string() : content.get<std::string>();
    if (auto it = j.find("usage"); it != j.end() && it->is_object()) {
      r.usage.prompt_tokens = it->value("prompt_tokens", std::int64_t{0});
      r.usage.completion_tokens = it->value("completion_tokens", std::int64_t{0});
    }
  } catch (const json::exception& e) {
    throw ProtocolError(fmt::format("malformed chat completion: {}", e.what()));
  }
  if (r.usage.prompt_tokens < 0 || r.usage.completion_tokens < 0) {
    throw ProtocolError("negative token usage in response");
  }
  return r;
}

std::string make_chat_completion(const std::string& content, const TokenUsage& usage,
                                 const std::string& model) {
  json j;
  j["id"] = "chatcmpl-" + text::hex64(text::fnv1a64(content));
  j["object"] = "chat.completion";
  j["model"] = model;
  j["choices"] = json::array(
      {{{"index", 0},
        {"message", {{"role", "assistant"}, {"content", content}}},
        {"finish_reason", "stop"}}});
  j["usage"] = {{"prompt_tokens", usage.prompt_tokens},
                {"completion_tokens", usage.completion_tokens},
                {"total_tokens", usage.prompt_tokens + usage.completion_tokens}};
  return j.dump();
}

namespace {

class HttpTransport : public Transport {
 public:
  HttpTransport(const std::string& endpoint_url, std::string api_key, int timeout_ms)
      : api_key_(std::move(api_key)), timeout_ms_(timeout_ms) {
    // Split "scheme://host:port/prefix" into origin and path prefix.
    const auto scheme_end = endpoint_url.find("://");
    const auto path_start =
        endpoint_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    origin_ = endpoint_url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : endpoint_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    if (prefix.ends_with("/v1")) prefix.resize(prefix.size() - 3);
    path_ = prefix + "/v1/chat/completions";
    models_path_ = prefix + "/v1/models";
  }

  HttpResult post(const std::string& body) override {
    httplib::Client client(origin_);
    configure(client);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) return HttpResult{0, "", httplib::to_string(res.error())};
    return HttpResult{res->status, res->body, ""};
  }

  bool reachable() override {
    httplib::Client client(origin_);
    configure(client);
    client.set_connection_timeout(std::chrono::seconds(5));
    client.set_read_timeout(std::chrono::seconds(5));
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    // Any HTTP answer means something is listening.
    return static_cast<bool>(client.Get(models_path_, headers));
  }

 private:
  void configure(httplib::Client& client) const {
    const auto timeout = std::chrono::milliseconds(timeout_ms_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout) +
                                  std::chrono::seconds(1));
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
  }

  std::string origin_;
  std::string path_;
  std::string models_path_;
  std::string api_key_;
  int timeout_ms_;
};

bool transient_status(int status) { return status == 0 || status == 429 || status >= 500; }

}  // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& endpoint_url,
                                               const std::string& api_key, int timeout_ms) {
  return std::make_unique<HttpTransport>(endpoint_url, api_key, timeout_ms);
}

Gateway::Gateway(GatewayConfig config, std::unique_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
  if (config_.max_in_flight < 1) config_.max_in_flight = 1;
  if (config_.retry_budget < 0) config_.retry_budget = 0;
}

int Gateway::backoff_delay_ms(const GatewayConfig& cfg, int attempt) {
  const int shift = std::min(attempt - 1, 20);
  const std::int64_t delay = static_cast<std::int64_t>(cfg.backoff_base_ms) << shift;
  return static_cast<int>(std::min<std::int64_t>(delay, cfg.backoff_max_ms));
}

void Gateway::acquire() {
  std::unique_lock lock(slot_mu_);
  slot_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
  ++in_flight_;
  high_water_ = std::max(high_water_, in_flight_);
}

void Gateway::release() {
  {
    std::lock_guard lock(slot_mu_);
    --in_flight_;
  }
  slot_cv_.notify_one();
}

void Gateway::record(const std::string& stage, const StageUsage& delta) {
  std::lock_guard lock(metrics_mu_);
  auto& s = stages_[stage.empty() ? "other" : stage];
  s.requests += delta.requests;
  s.failures += delta.failures;
  s.retries += delta.retries;
  s.prompt_tokens += delta.prompt_tokens;
  s.completion_tokens += delta.completion_tokens;
  s.latency_ms += delta.latency_ms;
}

ChatResponse Gateway::chat(const ChatRequest& request) {
  validate_request(request);
  const auto body = request_to_json(request, config_.model).dump();

  struct Slot {
    Gateway& g;
    explicit Slot(Gateway& gw) : g(gw) { g.acquire(); }
    ~Slot() { g.release(); }
  } slot(*this);

  std::vector<int> delays;
  StageUsage usage;
  usage.requests = 1;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 start)
        .count();
  };
  auto finish_failure = [&] {
    usage.failures = 1;
    usage.latency_ms = elapsed_ms();
    record(request.stage, usage);
    std::lock_guard lock(metrics_mu_);
    last_backoff_ = delays;
  };

  for (int attempt = 0;; ++attempt) {
    const auto res = transport_->post(body);
    if (res.status == 200) {
      ChatResponse out;
      try {
        out = parse_chat_completion(res.body);
      } catch (const ProtocolError&) {
        finish_failure();
        throw;
      }
      out.retries = attempt;
      out.latency_ms = elapsed_ms();
      usage.retries = attempt;
      usage.prompt_tokens = out.usage.prompt_tokens;
      usage.completion_tokens = out.usage.completion_tokens;
      usage.latency_ms = out.latency_ms;
      record(request.stage, usage);
      std::lock_guard lock(metrics_mu_);
      last_backoff_ = delays;
      return out;
    }
    const auto detail =
        res.status == 0 ? res.error : fmt::format("HTTP {}: {}", res.status, res.body.substr(0, 200));
    if (!transient_status(res.status)) {
      finish_failure();
      throw LlmUnavailable(fmt::format("non-retryable response from LLM endpoint ({})", detail));
    }
    if (attempt >= config_.retry_budget) {
      usage.retries = attempt;
      finish_failure();
      throw LlmUnavailable(fmt::format("LLM endpoint failed after {} retries ({})", attempt, detail));
    }
    const int delay = backoff_delay_ms(config_, attempt + 1);
    delays.push_back(delay);
    std::this_thread::sleep_for(std::chrono::milliseconds(delay));
  }
}

GatewayMetrics Gateway::metrics() const {
  GatewayMetrics m;
  {
    std::lock_guard lock(metrics_mu_);
    m.stages = stages_;
    m.backoff_delays_ms = last_backoff_;
  }
  std::lock_guard lock(slot_mu_);
  m.in_flight_high_water = high_water_;
  return m;
}

ChatResponse ask(ChatModel& model, const std::string& stage, const std::string& system,
                 const std::string& user, std::optional<std::int64_t> seed, double temperature) {
  ChatRequest req;
  if (!system.empty()) req.messages.push_back({"system", system});
  req.messages.push_back({"user", user});
  req.seed = seed;
  req.stage = stage;
  req.temperature = temperature;
  return model.chat(req);
}

}  // namespace vig
