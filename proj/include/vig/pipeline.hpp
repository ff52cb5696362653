#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vig/context_builder.hpp"
#include "vig/ingestion.hpp"
#include "vig/instruction_gen.hpp"
#include "vig/llm_gateway.hpp"
#include "vig/scene_tree.hpp"
#include "vig/scripted_server.hpp"
#include "vig/shards.hpp"

namespace vig {

// Mirrors the ablation columns: quality filtering, ASCII-tree box
// conversion, context reduction.
struct FeatureFlags {
  bool filtering = true;
  bool bbox_conversion = true;
  bool reduction = true;

  friend bool operator==(const FeatureFlags&, const FeatureFlags&) = default;
};

// "filtering,bbox,reduction", "all", "none" or "" (= none).
FeatureFlags parse_features(std::string_view csv);
std::string to_string(const FeatureFlags& f);

struct ScriptedConfig {
  std::filesystem::path fixtures;  // optional JSONL of digest -> response
  FallbackRule fallback = FallbackRule::simulate;
  FaultPlan faults;
};

struct PipelineConfig {
  std::filesystem::path registry_path;
  std::filesystem::path prompts_dir;  // empty: compiled-in prompts
  std::string prompts_set = "llava";
  std::filesystem::path output_dir;
  std::filesystem::path work_dir;  // grouped manifest, shard plan, claims
  std::size_t shard_count = 1;
  std::uint64_t rng_seed = 0;
  int parallelism = 4;

  FeatureFlags features;
  GenerationParams generation;
  SceneTreeParams scene;
  GatewayConfig gateway;
  ScriptedConfig scripted;
  ClaimOptions claims;
  bool batch_qa = true;

  int llm_latency_ms = 0;        // scripted mode only
  int sidecar_ms_per_image = 0;  // simulated mask/depth cost when bbox conversion is on

  // Throws ConfigError when a referenced path is missing or a value is out of range.
  void validate() const;
};

// Relative paths resolve against base_dir. VIG_ENDPOINT_URL and VIG_API_KEY
// override the gateway credentials.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

std::unique_ptr<Gateway> make_gateway(const PipelineConfig& cfg);
PromptLibrary load_prompts(const PipelineConfig& cfg);

struct IngestSummary {
  std::size_t records = 0;
  std::size_t images = 0;
  std::size_t issues = 0;
};

std::filesystem::path grouped_manifest_path(const PipelineConfig& cfg);
std::filesystem::path plan_dir(const PipelineConfig& cfg);
std::filesystem::path claims_dir(const PipelineConfig& cfg);
std::filesystem::path shard_output_path(const PipelineConfig& cfg, std::size_t shard_id);
std::filesystem::path errors_path(const PipelineConfig& cfg);

// Loads every dataset, groups by link key, writes the grouped manifest and
// issues.jsonl into work_dir.
IngestSummary run_ingest(const PipelineConfig& cfg);
ShardPlan run_plan(const PipelineConfig& cfg);

// Conversation seed of one image; the record id is "<link_key>-<hex seed>".
std::uint64_t conversation_seed(std::uint64_t rng_seed, const std::string& link_key);
std::string conversation_id(const std::string& link_key, std::uint64_t seed);

struct StageSeconds {
  double scene = 0;
  double context = 0;
  double generation = 0;
  double write = 0;
};

// Result of one image: a record line or an error line, never both.
struct ImageOutcome {
  std::string id;
  std::optional<std::string> record;
  std::optional<std::string> error;
  int turns = 0;
  StageSeconds seconds;
};

struct ImageJob {
  LinkKey key;
  MetadataBundle bundle;
};

// Everything an image needs besides its bundle.
struct PipelineRuntime {
  const PipelineConfig& cfg;
  const PromptLibrary& prompts;
  ChatModel& llm;
};

ImageOutcome process_image(const ImageJob& job, const PipelineRuntime& rt);

// Per-image work in parallel (OpenMP, cfg.parallelism threads); results
// come back in job order. parallel=false is the serial reference.
std::vector<ImageOutcome> process_batch(const std::vector<ImageJob>& jobs, const PipelineRuntime& rt,
                                        bool parallel = true);

// Output record <-> Conversation.
nlohmann::json conversation_record(const std::string& id, const Conversation& conv,
                                   const std::string& link_key, const nlohmann::json& extra);
Conversation conversation_from_record(const nlohmann::json& record);

// Appends one line and flushes; throws IoError.
void append_line(const std::filesystem::path& path, const std::string& line);
void write_conversation(const std::filesystem::path& path, const std::string& id,
                        const Conversation& conv, const std::string& link_key,
                        const nlohmann::json& extra = nlohmann::json::object());

// Drops a partial trailing line left by a crash and returns the ids
// already written.
std::vector<std::string> recover_output(const std::filesystem::path& path);

// Schema check of one output record; returns the problems found.
std::vector<std::string> check_record_schema(const nlohmann::json& record);

struct RunOptions {
  std::string worker_id = "worker";
  std::optional<std::vector<std::size_t>> shards;  // restrict to these shard ids
  ChatModel* llm = nullptr;                        // overrides the configured gateway
  bool parallel = true;
};

struct RunSummary {
  std::size_t shards_processed = 0;
  std::size_t images = 0;
  std::size_t conversations = 0;
  std::size_t skipped_existing = 0;
  std::size_t failed = 0;
  std::size_t turns = 0;
  double wall_seconds = 0;
  double conversations_per_hour = 0;
  StageSeconds stage_seconds;  // summed over images (thread time)
  std::map<std::string, StageUsage> llm_stages;

  nlohmann::json to_json() const;
};

// Claims shards one by one and runs every image of each. Prepares ingest
// and plan first when they are missing. Throws EndpointUnreachable in live
// mode when the endpoint does not answer.
RunSummary run_pipeline(const PipelineConfig& cfg, const RunOptions& options = {});

}  // namespace vig
