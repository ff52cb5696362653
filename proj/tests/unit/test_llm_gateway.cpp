#include <doctest.h>

#include <atomic>
#include <deque>
#include <thread>

#include "vig/error.hpp"
#include "vig/llm_gateway.hpp"
#include "vig/scripted_server.hpp"

using namespace vig;

namespace {

// Replays a fixed list of HTTP results, then repeats the last one.
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(std::deque<HttpResult> script) : script_(std::move(script)) {}
  HttpResult post(const std::string&) override {
    ++calls;
    if (script_.size() > 1) {
      auto r = script_.front();
      script_.pop_front();
      return r;
    }
    return script_.front();
  }
  int calls = 0;

 private:
  std::deque<HttpResult> script_;
};

HttpResult ok(const std::string& content) { return {200, make_chat_completion(content, {3, 4}, "m"), ""}; }

GatewayConfig fast_config() {
  GatewayConfig c;
  c.mode = GatewayMode::scripted;
  c.backoff_base_ms = 1;
  c.backoff_max_ms = 4;
  c.retry_budget = 3;
  return c;
}

ChatRequest req(const std::string& user, const std::string& stage = "generate") {
  ChatRequest r;
  r.messages = {{"system", "sys"}, {"user", user}};
  r.stage = stage;
  return r;
}

}  // namespace

TEST_CASE("request validation and wire format") {
  ChatRequest r;
  CHECK_THROWS_AS(validate_request(r), ProtocolError);
  r.messages = {{"assistant", "x"}};
  CHECK_THROWS_AS(validate_request(r), ProtocolError);
  r = req("hello");
  r.seed = 42;
  const auto body = request_to_json(r, "default-model");
  CHECK(body["model"] == "default-model");
  CHECK(body["messages"].size() == 2);
  const auto back = request_from_json(body);
  CHECK(back.messages == r.messages);
  CHECK(back.stage == "generate");
  CHECK(back.seed == 42);

  auto other = r;
  other.temperature = 0.0;
  other.seed = 7;
  CHECK(request_digest(other.messages) == request_digest(r.messages));
  CHECK(request_digest(req("hello!").messages) != request_digest(r.messages));
  CHECK(request_digest(r.messages).size() == 16);

  const auto parsed = parse_chat_completion(make_chat_completion("hi", {5, 6}, "m"));
  CHECK(parsed.content == "hi");
  CHECK(parsed.usage.completion_tokens == 6);
  CHECK_THROWS_AS(parse_chat_completion("{}"), ProtocolError);
  CHECK_THROWS_AS(parse_chat_completion("not json"), ProtocolError);
}

TEST_CASE("429 once then 200 succeeds with one retry") {
  auto t = std::make_unique<ReplayTransport>(std::deque<HttpResult>{{429, "slow down", ""}, ok("fine")});
  auto* raw = t.get();
  Gateway g(fast_config(), std::move(t));
  const auto r = g.chat(req("x"));
  CHECK(r.content == "fine");
  CHECK(r.retries == 1);
  CHECK(raw->calls == 2);
  const auto m = g.metrics();
  CHECK(m.stages.at("generate").retries == 1);
  CHECK(m.stages.at("generate").requests == 1);
  CHECK(m.backoff_delays_ms.size() == 1);
}

TEST_CASE("retry budget exhaustion and non-retryable errors") {
  SUBCASE("persistent 500") {
    auto t = std::make_unique<ReplayTransport>(std::deque<HttpResult>{{500, "boom", ""}});
    auto* raw = t.get();
    Gateway g(fast_config(), std::move(t));
    CHECK_THROWS_AS(g.chat(req("x")), LlmUnavailable);
    CHECK(raw->calls == 4);  // first try plus 3 retries
    const auto m = g.metrics();
    CHECK(m.stages.at("generate").failures == 1);
    CHECK(m.backoff_delays_ms.size() == 3);
    for (std::size_t i = 1; i < m.backoff_delays_ms.size(); ++i)
      CHECK(m.backoff_delays_ms[i] >= m.backoff_delays_ms[i - 1]);
  }
  SUBCASE("connection failure is retried") {
    auto t = std::make_unique<ReplayTransport>(std::deque<HttpResult>{{0, "", "refused"}, ok("up")});
    Gateway g(fast_config(), std::move(t));
    CHECK(g.chat(req("x")).content == "up");
  }
  SUBCASE("400 is not retried") {
    auto t = std::make_unique<ReplayTransport>(std::deque<HttpResult>{{400, "bad", ""}, ok("never")});
    auto* raw = t.get();
    Gateway g(fast_config(), std::move(t));
    CHECK_THROWS_AS(g.chat(req("x")), LlmUnavailable);
    CHECK(raw->calls == 1);
  }
  SUBCASE("malformed body") {
    Gateway g(fast_config(), std::make_unique<ReplayTransport>(std::deque<HttpResult>{{200, "{\"choices\": 3}", ""}}));
    CHECK_THROWS_AS(g.chat(req("x")), ProtocolError);
  }
}

TEST_CASE("backoff schedule is non-decreasing and capped") {
  GatewayConfig c;
  c.backoff_base_ms = 200;
  c.backoff_max_ms = 10000;
  int prev = 0;
  for (int a = 1; a <= 12; ++a) {
    const int d = Gateway::backoff_delay_ms(c, a);
    CHECK(d >= prev);
    CHECK(d <= 10000);
    prev = d;
  }
  CHECK(Gateway::backoff_delay_ms(c, 1) == 200);
  CHECK(Gateway::backoff_delay_ms(c, 3) == 800);
  CHECK(Gateway::backoff_delay_ms(c, 10) == 10000);
}

TEST_CASE("scripted responder") {
  const auto fixture_req = req("known prompt");
  std::map<std::string, std::string> fixtures{{request_digest(fixture_req.messages), "recorded answer"}};

  SUBCASE("fixture hit, echo and 404") {
    ScriptedOptions echo;
    echo.fallback = FallbackRule::echo_last_user;
    auto r = std::make_shared<ScriptedResponder>(fixtures, echo);
    Gateway g(fast_config(), make_in_process_transport(r));
    CHECK(g.chat(fixture_req).content == "recorded answer");
    CHECK(g.chat(req("say this back")).content == "say this back");
    CHECK(r->stats().fixture_hits == 1);

    ScriptedOptions none;
    none.fallback = FallbackRule::none;
    auto strict = std::make_shared<ScriptedResponder>(fixtures, none);
    CHECK(strict->handle(request_to_json(req("unknown"), "m").dump()).status == 404);
    Gateway g2(fast_config(), make_in_process_transport(strict));
    CHECK_THROWS_AS(g2.chat(req("unknown")), LlmUnavailable);
  }
  SUBCASE("custom rule runs before the fallback") {
    auto r = std::make_shared<ScriptedResponder>();
    r->set_rule([](const ChatRequest& q) -> std::optional<std::string> {
      if (q.stage == "verify") return "no";
      return std::nullopt;
    });
    Gateway g(fast_config(), make_in_process_transport(r));
    CHECK(g.chat(req("anything", "verify")).content == "no");
    CHECK(g.chat(req("anything", "quality")).content == "keep");
  }
  SUBCASE("fault injection is deterministic and retried away") {
    ScriptedOptions o;
    o.faults.http_429_rate = 0.5;
    o.faults.seed = 9;
    std::vector<std::string> first, second;
    for (auto* out : {&first, &second}) {
      auto r = std::make_shared<ScriptedResponder>(fixtures, o);
      auto cfg = fast_config();
      cfg.retry_budget = 20;
      Gateway g(cfg, make_in_process_transport(r));
      for (int i = 0; i < 30; ++i) {
        const auto resp = g.chat(req("echo " + std::to_string(i)));
        out->push_back(resp.content + "/" + std::to_string(resp.retries));
        CHECK(resp.retries <= cfg.retry_budget);
      }
      CHECK(r->stats().injected_429 > 0);
    }
    CHECK(first == second);
  }
  SUBCASE("fixture files round trip") {
    const auto path = std::filesystem::temp_directory_path() / ("vig_fixtures_" + std::to_string(::getpid()) + ".jsonl");
    save_fixtures(path, fixtures);
    CHECK(load_fixtures(path) == fixtures);
    std::filesystem::remove(path);
  }
}

TEST_CASE("64 parallel calls never exceed max_in_flight") {
  ScriptedOptions o;
  o.latency_ms = 5;
  auto r = std::make_shared<ScriptedResponder>(std::map<std::string, std::string>{}, o);
  auto cfg = fast_config();
  cfg.max_in_flight = 8;
  Gateway g(cfg, make_in_process_transport(r));
  std::vector<std::thread> threads;
  std::atomic<int> ok_count{0};
  for (int i = 0; i < 64; ++i) {
    threads.emplace_back([&, i] {
      if (!g.chat(req("call " + std::to_string(i), "quality")).content.empty()) ++ok_count;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok_count == 64);
  CHECK(r->stats().in_flight_high_water <= 8);
  CHECK(r->stats().in_flight_high_water >= 2);
  CHECK(g.metrics().in_flight_high_water <= 8);
}

TEST_CASE("scripted server speaks HTTP") {
  auto responder = std::make_shared<ScriptedResponder>();
  ScriptedServer server(responder);
  CHECK(server.port() > 0);
  auto cfg = fast_config();
  cfg.mode = GatewayMode::live;
  cfg.endpoint_url = server.url();
  Gateway g(cfg, make_http_transport(cfg.endpoint_url, "", 5000));
  CHECK(g.reachable());
  CHECK(g.chat(req("ping", "verify")).content == "yes");
  CHECK(responder->stats().requests == 1);

  Gateway dead(cfg, make_http_transport("http://127.0.0.1:1", "", 500));
  CHECK_FALSE(dead.reachable());
}

TEST_CASE("simulated replies are deterministic") {
  auto r = req("Facts:\n1. A red bus on a street.\n2. There is a man near the bus.");
  r.seed = 5;
  CHECK(simulate_reply(r) == simulate_reply(r));
  CHECK(parse_chat_completion(ScriptedResponder().handle(request_to_json(r, "m").dump()).body).content ==
        simulate_reply(r));
}
