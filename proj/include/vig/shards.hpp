#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace vig {

// fnv1a64(link_key) mod shard_count.
std::size_t shard_of(std::string_view link_key, std::size_t shard_count);

struct ShardEntry {
  std::uint64_t offset = 0;  // byte offset of the record in the grouped manifest
  std::string link_key;

  friend bool operator==(const ShardEntry&, const ShardEntry&) = default;
};

struct ShardPlan {
  std::filesystem::path manifest;
  std::vector<std::vector<ShardEntry>> shards;

  std::size_t total() const;
};

std::filesystem::path shard_index_path(const std::filesystem::path& plan_dir, std::size_t shard_id);
std::string shard_name(std::size_t shard_id);  // "shard-0003"

// Scans the grouped manifest and writes plan.json plus one shard-NNNN.idx
// ("<offset>\t<link_key>" per line) per shard into plan_dir.
ShardPlan plan_shards(const std::filesystem::path& grouped_manifest, std::size_t shard_count,
                      const std::filesystem::path& plan_dir);
ShardPlan load_shard_plan(const std::filesystem::path& plan_dir);

// The manifest line starting at `offset`.
std::string read_record_at(std::istream& manifest, std::uint64_t offset);

struct ClaimOptions {
  std::chrono::seconds staleness{300};
  std::chrono::seconds heartbeat{30};
};

struct ShardClaim {
  std::size_t shard_id = 0;
  std::string worker_id;
  std::filesystem::path path;
};

// Exclusive creation of <claims_dir>/shard-NNNN.claim. A claim whose mtime
// is older than the staleness window is removed under an flock on
// shard-NNNN.lock and the creation is retried once. nullopt when another
// live claim exists (AlreadyClaimed) or the shard is done.
std::optional<ShardClaim> claim_shard(const std::filesystem::path& claims_dir,
                                      std::size_t shard_id, const std::string& worker_id,
                                      const ClaimOptions& options = {});

// Refreshes the claim's mtime. False when the claim file is gone or owned
// by another worker.
bool heartbeat(const ShardClaim& claim);
void release_claim(const ShardClaim& claim);

void mark_done(const std::filesystem::path& claims_dir, std::size_t shard_id);
bool shard_done(const std::filesystem::path& claims_dir, std::size_t shard_id);

// Exclusive flock held for the object's lifetime; creates the file.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

// Calls heartbeat() every interval on a background thread until destroyed.
class HeartbeatThread {
 public:
  HeartbeatThread(ShardClaim claim, std::chrono::milliseconds interval);
  ~HeartbeatThread();
  HeartbeatThread(const HeartbeatThread&) = delete;
  HeartbeatThread& operator=(const HeartbeatThread&) = delete;

  bool lost() const { return lost_.load(); }

 private:
  ShardClaim claim_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::atomic<bool> lost_{false};
  std::thread thread_;
};

}  // namespace vig
