#include "vig/shards.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vig/error.hpp"
#include "vig/ingestion.hpp"
#include "vig/text.hpp"

namespace fs = std::filesystem;

namespace vig {

std::size_t shard_of(std::string_view link_key, std::size_t shard_count) {
  if (shard_count == 0) throw ConfigError("shard_count must be >= 1");
  return static_cast<std::size_t>(text::fnv1a64(link_key) % shard_count);
}

std::size_t ShardPlan::total() const {
  std::size_t n = 0;
  for (const auto& s : shards) n += s.size();
  return n;
}

std::string shard_name(std::size_t shard_id) { return fmt::format("shard-{:04d}", shard_id); }

fs::path shard_index_path(const fs::path& plan_dir, std::size_t shard_id) {
  return plan_dir / (shard_name(shard_id) + ".idx");
}

namespace {

void write_atomically(const fs::path& path, const std::string& content) {
  const auto tmp = fs::path(path.string() + fmt::format(".tmp{}", ::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", tmp.string()));
    out << content;
    if (!out.flush()) throw IoError(fmt::format("write failed: {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

}  // namespace

ShardPlan plan_shards(const fs::path& grouped_manifest, std::size_t shard_count,
                      const fs::path& plan_dir) {
  if (shard_count == 0) throw ConfigError("shard_count must be >= 1");
  std::ifstream in(grouped_manifest, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open grouped manifest {}", grouped_manifest.string()));
  ShardPlan plan;
  plan.manifest = grouped_manifest;
  plan.shards.resize(shard_count);
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const auto next = offset + line.size() + 1;
    if (!text::trim(line).empty()) {
      const auto key = parse_grouped_line(line).first.str();
      plan.shards[shard_of(key, shard_count)].push_back({offset, key});
    }
    offset = next;
  }
  fs::create_directories(plan_dir);
  for (std::size_t s = 0; s < shard_count; ++s) {
    std::string body;
    for (const auto& e : plan.shards[s]) body += fmt::format("{}\t{}\n", e.offset, e.link_key);
    write_atomically(shard_index_path(plan_dir, s), body);
  }
  nlohmann::json meta = {{"manifest", fs::absolute(grouped_manifest).string()},
                         {"shard_count", shard_count},
                         {"records", plan.total()}};
  write_atomically(plan_dir / "plan.json", meta.dump(2) + "\n");
  return plan;
}

ShardPlan load_shard_plan(const fs::path& plan_dir) {
  std::ifstream meta_in(plan_dir / "plan.json");
  if (!meta_in) throw IoError(fmt::format("no shard plan in {}", plan_dir.string()));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(fmt::format("bad plan.json: {}", e.what()));
  }
  ShardPlan plan;
  plan.manifest = meta.at("manifest").get<std::string>();
  plan.shards.resize(meta.at("shard_count").get<std::size_t>());
  for (std::size_t s = 0; s < plan.shards.size(); ++s) {
    std::ifstream in(shard_index_path(plan_dir, s));
    if (!in) throw IoError(fmt::format("missing {}", shard_index_path(plan_dir, s).string()));
    std::string line;
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      plan.shards[s].push_back({std::stoull(line.substr(0, tab)), line.substr(tab + 1)});
    }
  }
  return plan;
}

std::string read_record_at(std::istream& manifest, std::uint64_t offset) {
  manifest.clear();
  manifest.seekg(static_cast<std::streamoff>(offset));
  std::string line;
  if (!std::getline(manifest, line)) throw IoError(fmt::format("no record at offset {}", offset));
  return line;
}

namespace {

fs::path claim_path(const fs::path& dir, std::size_t id) { return dir / (shard_name(id) + ".claim"); }
fs::path lock_path(const fs::path& dir, std::size_t id) { return dir / (shard_name(id) + ".lock"); }
fs::path done_path(const fs::path& dir, std::size_t id) { return dir / (shard_name(id) + ".done"); }

bool try_create(const fs::path& path, const std::string& body) {
  const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY | O_CLOEXEC, 0644);
  if (fd < 0) {
    if (errno == EEXIST) return false;
    throw IoError(fmt::format("cannot create {}: {}", path.string(), std::strerror(errno)));
  }
  const auto written = ::write(fd, body.data(), body.size());
  ::fsync(fd);
  ::close(fd);
  if (written != static_cast<ssize_t>(body.size())) {
    throw IoError(fmt::format("short write to {}", path.string()));
  }
  return true;
}

// Age in seconds of the file's mtime; nullopt when it does not exist.
std::optional<double> age_seconds(const fs::path& path) {
  struct stat st {};
  if (::stat(path.c_str(), &st) != 0) return std::nullopt;
  struct timespec now {};
  ::clock_gettime(CLOCK_REALTIME, &now);
  return static_cast<double>(now.tv_sec - st.st_mtim.tv_sec) +
         static_cast<double>(now.tv_nsec - st.st_mtim.tv_nsec) * 1e-9;
}

std::string claim_owner(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  try {
    return nlohmann::json::parse(in).value("worker", "");
  } catch (const nlohmann::json::exception&) {
    return {};
  }
}


}  // namespace

FileLock::FileLock(const fs::path& path) {
  fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError(fmt::format("cannot open lock {}: {}", path.string(), std::strerror(errno)));
  while (::flock(fd_, LOCK_EX) != 0) {
    if (errno != EINTR) {
      ::close(fd_);
      throw IoError(fmt::format("flock {}: {}", path.string(), std::strerror(errno)));
    }
  }
}

FileLock::~FileLock() {
  ::flock(fd_, LOCK_UN);
  ::close(fd_);
}

std::optional<ShardClaim> claim_shard(const fs::path& claims_dir, std::size_t shard_id,
                                      const std::string& worker_id, const ClaimOptions& options) {
  fs::create_directories(claims_dir);
  if (shard_done(claims_dir, shard_id)) return std::nullopt;
  const auto path = claim_path(claims_dir, shard_id);
  const auto body = nlohmann::json{{"shard", shard_id}, {"worker", worker_id}, {"pid", ::getpid()}}.dump() + "\n";
  if (try_create(path, body)) return ShardClaim{shard_id, worker_id, path};

  const auto age = age_seconds(path);
  if (age && *age <= static_cast<double>(options.staleness.count())) return std::nullopt;

  FileLock lock(lock_path(claims_dir, shard_id));
  // Another worker may have reclaimed while we waited for the lock.
  const auto again = age_seconds(path);
  if (again && *again > static_cast<double>(options.staleness.count())) fs::remove(path);
  if (shard_done(claims_dir, shard_id)) return std::nullopt;
  if (try_create(path, body)) return ShardClaim{shard_id, worker_id, path};
  return std::nullopt;
}

bool heartbeat(const ShardClaim& claim) {
  if (claim_owner(claim.path) != claim.worker_id) return false;
  std::error_code ec;
  fs::last_write_time(claim.path, fs::file_time_type::clock::now(), ec);
  return !ec;
}

void release_claim(const ShardClaim& claim) {
  if (claim_owner(claim.path) == claim.worker_id) {
    std::error_code ec;
    fs::remove(claim.path, ec);
  }
}

void mark_done(const fs::path& claims_dir, std::size_t shard_id) {
  std::ofstream out(done_path(claims_dir, shard_id), std::ios::trunc);
  out << "done\n";
}

bool shard_done(const fs::path& claims_dir, std::size_t shard_id) {
  return fs::exists(done_path(claims_dir, shard_id));
}

HeartbeatThread::HeartbeatThread(ShardClaim claim, std::chrono::milliseconds interval)
    : claim_(std::move(claim)) {
  thread_ = std::thread([this, interval] {
    std::unique_lock lock(mu_);
    while (!cv_.wait_for(lock, interval, [this] { return stop_; })) {
      if (!heartbeat(claim_)) lost_ = true;
    }
  });
}

HeartbeatThread::~HeartbeatThread() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  thread_.join();
}

}  // namespace vig
