#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "models.hpp"
#include "vig/error.hpp"
#include "vig/pipeline.hpp"
#include "vig/synthetic.hpp"

using namespace vig;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("vig_pipeline_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<json> read_records(const fs::path& dir) {
  std::vector<json> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (!name.starts_with("shard-") || e.path().extension() != ".jsonl") continue;
    std::ifstream in(e.path());
    for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  }
  return out;
}

Conversation sample_conversation() {
  Conversation c;
  c.image = {"coco", "7", "img/7.jpg", 640, 480};
  c.turns = {{"What is on the table?", "A red cup.", "conversation", 0, 1},
             {"Is anyone\nsitting?", "Yes, a man.", "complex_reasoning", 1, 2}};
  c.provenance.context_chars_initial = 500;
  c.provenance.context_chars_final = 60;
  c.provenance.templates_used = {"conversation", "complex_reasoning"};
  c.provenance.retries_total = 1;
  c.provenance.iterations = 2;
  c.provenance.llm_calls = 6;
  c.provenance.quality = {{true, "keep"}, {true, "keep"}};
  c.provenance.stop_reason = "threshold";
  return c;
}

}  // namespace

TEST_CASE("feature flags") {
  CHECK(parse_features("all") == FeatureFlags{true, true, true});
  CHECK(parse_features("none") == FeatureFlags{false, false, false});
  CHECK(parse_features("") == FeatureFlags{false, false, false});
  CHECK(parse_features("bbox,reduction") == FeatureFlags{false, true, true});
  CHECK_THROWS_AS(parse_features("bbox,teleport"), ConfigError);
  CHECK(parse_features(to_string(FeatureFlags{true, false, true})) == FeatureFlags{true, false, true});
}

TEST_CASE("config errors") {
  const auto dir = temp_dir("config");
  const auto cfg_path = write_synthetic_fixture(dir, {.images = 3});
  CHECK_NOTHROW(load_config(cfg_path));
  std::ifstream in(cfg_path);
  const auto base = json::parse(in);
  auto bad = [&](json patch) {
    auto j = base;
    j.merge_patch(patch);
    auto c = config_from_json(j, dir);
    c.validate();
    return c;
  };
  CHECK_THROWS_AS(bad({{"unknown_key", 1}}), ConfigError);
  CHECK_THROWS_AS(bad({{"shard_count", 0}}), ConfigError);
  CHECK_THROWS_AS(bad({{"registry", "missing.json"}}), ConfigError);
  CHECK_THROWS_AS(bad({{"generation", {{"reduction_threshold", 2.0}}}}), ConfigError);
  CHECK_THROWS_AS(bad({{"gateway", {{"mode", "psychic"}}}}), ConfigError);
  CHECK_THROWS_AS(bad({{"features", "bbox,nope"}}), ConfigError);
  CHECK(bad({{"features", "none"}}).features == FeatureFlags{false, false, false});
  fs::remove_all(dir);
}

TEST_CASE("records: format, round trip, schema") {
  const auto conv = sample_conversation();
  const auto rec = conversation_record("k-1", conv, "file-stem:7", json::object());
  REQUIRE(rec["conversations"].size() == 4);
  CHECK(rec["conversations"][0]["from"] == "human");
  CHECK(rec["conversations"][0]["value"] == "<image>\nWhat is on the table?");
  CHECK(rec["conversations"][1]["from"] == "gpt");
  CHECK(rec["conversations"][2]["value"] == "Is anyone\nsitting?");
  CHECK(check_record_schema(rec).empty());
  CHECK(conversation_from_record(rec) == conv);

  auto two_tokens = rec;
  two_tokens["conversations"][2]["value"] = "<image> again";
  CHECK_FALSE(check_record_schema(two_tokens).empty());
  auto no_token = rec;
  no_token["conversations"][0]["value"] = "What is on the table?";
  CHECK_FALSE(check_record_schema(no_token).empty());
  auto odd = rec;
  odd["conversations"].erase(3);
  CHECK_FALSE(check_record_schema(odd).empty());
  auto missing = rec;
  missing.erase("provenance");
  CHECK_FALSE(check_record_schema(missing).empty());

  const auto dir = temp_dir("records");
  write_conversation(dir / "out.jsonl", "k-1", conv, "file-stem:7");
  std::ifstream in(dir / "out.jsonl");
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(conversation_from_record(json::parse(line)) == conv);
  fs::remove_all(dir);
}

TEST_CASE("recover_output drops a partial trailing line") {
  const auto dir = temp_dir("recover");
  const auto path = dir / "shard-0000.jsonl";
  const auto conv = sample_conversation();
  write_conversation(path, "a", conv, "k:a");
  write_conversation(path, "b", conv, "k:b");
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"id": "c", "image": "x", "conversa)";
  }
  CHECK(recover_output(path) == std::vector<std::string>{"a", "b"});
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(std::count(content.begin(), content.end(), '\n') == 2);
  CHECK(content.back() == '\n');
  CHECK(recover_output(dir / "absent.jsonl").empty());
  fs::remove_all(dir);
}

TEST_CASE("parallel writers to distinct shard files keep every line") {
  const auto dir = temp_dir("writers");
  const auto conv = sample_conversation();
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 250; ++i)
        write_conversation(dir / fmt::format("shard-{:04d}.jsonl", t), fmt::format("{}-{}", t, i), conv, "k");
    });
  }
  for (auto& t : threads) t.join();
  const auto records = read_records(dir);
  CHECK(records.size() == 1000);
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r["id"].get<std::string>());
  CHECK(ids.size() == 1000);
  fs::remove_all(dir);
}

TEST_CASE("10-image fixture end to end") {
  const auto dir = temp_dir("e2e");
  const auto cfg = load_config(write_synthetic_fixture(dir, {.images = 10}));
  RunOptions opts;
  opts.worker_id = "w0";
  const auto summary = run_pipeline(cfg, opts);
  CHECK(summary.images == 10);
  CHECK(summary.conversations + summary.failed == 10);
  CHECK(summary.shards_processed == cfg.shard_count);
  const auto records = read_records(cfg.output_dir);
  CHECK(records.size() == summary.conversations);
  std::size_t turns = 0;
  for (const auto& r : records) {
    CHECK(check_record_schema(r).empty());
    turns += r["conversations"].size() / 2;
  }
  CHECK(turns == summary.turns);
  CHECK(summary.llm_stages.contains("generate"));

  SUBCASE("rerun skips everything") {
    fs::remove_all(claims_dir(cfg));
    const auto again = run_pipeline(cfg, opts);
    CHECK(again.conversations == 0);
    CHECK(again.skipped_existing == summary.conversations);
    CHECK(read_records(cfg.output_dir).size() == records.size());
  }
  SUBCASE("serial and parallel batches agree") {
    ImageJob job;
    const auto grouped = grouped_manifest_path(cfg);
    std::ifstream in(grouped);
    std::vector<ImageJob> jobs;
    for (std::string line; std::getline(in, line);) {
      auto [key, bundle] = parse_grouped_line(line);
      jobs.push_back({key, bundle});
    }
    auto gw = make_gateway(cfg);
    const auto prompts = load_prompts(cfg);
    const PipelineRuntime rt{cfg, prompts, *gw};
    const auto a = process_batch(jobs, rt, true);
    const auto b = process_batch(jobs, rt, false);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(a[i].record == b[i].record);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("all features off runs the direct path") {
  const auto dir = temp_dir("direct");
  const auto cfg = load_config(write_synthetic_fixture(dir, {.images = 6}, {{"features", "none"}}));
  testing::FnModel counting([](const ChatRequest& r) { return simulate_reply(r); });
  RunOptions opts;
  opts.llm = &counting;
  const auto summary = run_pipeline(cfg, opts);
  CHECK(summary.conversations > 0);
  CHECK(counting.count("tree_description") == 0);
  CHECK(counting.count("quality") == 0);
  for (const auto& r : read_records(cfg.output_dir)) {
    CHECK(r["provenance"]["features"] == "none");
    CHECK(r["provenance"]["scene_tree"] == "");
    CHECK(r["provenance"]["quality"].empty());
  }
  fs::remove_all(dir);
}
