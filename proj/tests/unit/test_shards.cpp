#include <doctest.h>

#include <barrier>
#include <filesystem>
#include <fstream>
#include <thread>

#include "oracles.hpp"
#include "vig/ingestion.hpp"
#include "vig/shards.hpp"

using namespace vig;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("vig_shards_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path grouped_manifest(const fs::path& dir, int n) {
  const auto path = dir / "grouped.jsonl";
  std::ofstream out(path);
  for (int i = 0; i < n; ++i) {
    MetadataBundle b{{"d", std::to_string(i), "img/" + std::to_string(i) + ".jpg", 10, 10}, {{"c", "d"}}, {}, {}};
    out << to_grouped_line({"file-stem", std::to_string(i)}, b) << "\n";
  }
  return path;
}

}  // namespace

TEST_CASE("planning") {
  const auto dir = temp_dir("plan");
  const auto manifest = grouped_manifest(dir, 10);
  SUBCASE("10 images into 2 shards") {
    const auto plan = plan_shards(manifest, 2, dir / "plan");
    CHECK(plan.shards.size() == 2);
    CHECK(plan.shards[0].size() + plan.shards[1].size() == 10);
    const auto loaded = load_shard_plan(dir / "plan");
    CHECK(loaded.shards == plan.shards);
    std::ifstream in(manifest);
    for (const auto& shard : plan.shards) {
      for (const auto& e : shard) {
        const auto [key, bundle] = parse_grouped_line(read_record_at(in, e.offset));
        CHECK(key.str() == e.link_key);
      }
    }
    CHECK(fs::exists(shard_index_path(dir / "plan", 1)));
    CHECK(shard_name(3) == "shard-0003");
  }
  SUBCASE("1 shard is the whole manifest in order") {
    const auto plan = plan_shards(manifest, 1, dir / "plan1");
    REQUIRE(plan.shards.size() == 1);
    CHECK(plan.total() == 10);
    for (std::size_t i = 1; i < plan.shards[0].size(); ++i)
      CHECK(plan.shards[0][i - 1].offset < plan.shards[0][i].offset);
  }
  fs::remove_all(dir);
}

TEST_CASE("1000 keys over 8 shards follow the hash oracle and stay balanced") {
  std::vector<std::size_t> sizes(8, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto key = "file-stem:syn_" + std::to_string(i);
    const auto s = shard_of(key, 8);
    CHECK(s == testing::oracle_fnv1a64(key) % 8);
    ++sizes[s];
  }
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  CHECK(static_cast<double>(*hi) / static_cast<double>(*lo) < 1.5);
}

TEST_CASE("claims") {
  const auto dir = temp_dir("claims");
  SUBCASE("claim, AlreadyClaimed, release, done") {
    auto a = claim_shard(dir, 0, "a");
    REQUIRE(a);
    CHECK_FALSE(claim_shard(dir, 0, "b"));
    CHECK(heartbeat(*a));
    CHECK_FALSE(heartbeat(ShardClaim{0, "b", a->path}));
    release_claim(*a);
    auto b = claim_shard(dir, 0, "b");
    REQUIRE(b);
    mark_done(dir, 0);
    release_claim(*b);
    CHECK(shard_done(dir, 0));
    CHECK_FALSE(claim_shard(dir, 0, "c"));
  }
  SUBCASE("stale claims are reclaimed") {
    auto a = claim_shard(dir, 1, "a");
    REQUIRE(a);
    fs::last_write_time(a->path, fs::file_time_type::clock::now() - std::chrono::seconds(600));
    CHECK_FALSE(heartbeat(ShardClaim{1, "other", a->path}));
    auto b = claim_shard(dir, 1, "b", {std::chrono::seconds(300), std::chrono::seconds(30)});
    REQUIRE(b);
    CHECK(b->worker_id == "b");
    CHECK_FALSE(heartbeat(*a));
  }
  SUBCASE("heartbeat thread keeps a claim fresh") {
    auto a = claim_shard(dir, 2, "a");
    REQUIRE(a);
    fs::last_write_time(a->path, fs::file_time_type::clock::now() - std::chrono::seconds(600));
    {
      HeartbeatThread hb(*a, std::chrono::milliseconds(10));
      std::this_thread::sleep_for(std::chrono::milliseconds(60));
      CHECK_FALSE(hb.lost());
    }
    CHECK_FALSE(claim_shard(dir, 2, "b", {std::chrono::seconds(5), std::chrono::seconds(1)}));
  }
  SUBCASE("two workers racing 100 times") {
    for (int round = 0; round < 100; ++round) {
      const auto race_dir = dir / ("race" + std::to_string(round));
      fs::create_directories(race_dir);
      std::barrier sync(2);
      std::atomic<int> winners{0};
      auto worker = [&](const std::string& id) {
        sync.arrive_and_wait();
        if (claim_shard(race_dir, 0, id)) ++winners;
      };
      std::thread t1(worker, "w1"), t2(worker, "w2");
      t1.join();
      t2.join();
      CHECK(winners == 1);
    }
  }
  fs::remove_all(dir);
}
