#include "vig/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vig {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(fmt::format("config key '{}' must be an object", key));
  return j.at(key);
}

}  // namespace

FeatureFlags parse_features(std::string_view csv) {
  FeatureFlags f{false, false, false};
  const auto all = text::trim(csv);
  if (all.empty() || all == "none") return f;
  if (all == "all") return {};
  std::stringstream ss{std::string(all)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = text::to_lower(text::trim(item));
    if (t == "filtering" || t == "filter") f.filtering = true;
    else if (t == "bbox" || t == "bbox_conversion") f.bbox_conversion = true;
    else if (t == "reduction" || t == "reduce") f.reduction = true;
    else if (!t.empty()) throw ConfigError(fmt::format("unknown feature '{}'", t));
  }
  return f;
}

std::string to_string(const FeatureFlags& f) {
  std::vector<std::string> on;
  if (f.filtering) on.emplace_back("filtering");
  if (f.bbox_conversion) on.emplace_back("bbox");
  if (f.reduction) on.emplace_back("reduction");
  return on.empty() ? "none" : fmt::format("{}", fmt::join(on, ","));
}

void PipelineConfig::validate() const {
  if (registry_path.empty()) throw ConfigError("config: 'registry' is required");
  if (!fs::exists(registry_path)) {
    throw ConfigError(fmt::format("registry '{}' does not exist", registry_path.string()));
  }
  if (!prompts_dir.empty() && !fs::is_directory(prompts_dir / prompts_set)) {
    throw ConfigError(fmt::format("prompt set '{}' not found", (prompts_dir / prompts_set).string()));
  }
  if (!scripted.fixtures.empty() && !fs::exists(scripted.fixtures)) {
    throw ConfigError(fmt::format("fixtures '{}' do not exist", scripted.fixtures.string()));
  }
  if (shard_count < 1) throw ConfigError("shard_count must be >= 1");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (gateway.max_in_flight < 1) throw ConfigError("gateway.max_in_flight must be >= 1");
  if (gateway.retry_budget < 0) throw ConfigError("gateway.retry_budget must be >= 0");
  if (claims.staleness.count() < 1 || claims.heartbeat.count() < 1) {
    throw ConfigError("claims.staleness_s and claims.heartbeat_s must be >= 1");
  }
  generation.validate();
  scene.validate();
}

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"registry", "prompts_dir", "prompts_set", "output_dir",
                                           "work_dir", "shard_count", "rng_seed", "parallelism",
                                           "features", "generation", "scene", "gateway", "claims",
                                           "simulation"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
  }
  auto resolve = [&](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    fs::path path(p);
    return (path.is_absolute() ? path : base_dir / path).lexically_normal();
  };

  PipelineConfig c;
  c.registry_path = resolve(get_or<std::string>(j, "registry", ""));
  c.prompts_dir = resolve(get_or<std::string>(j, "prompts_dir", ""));
  c.prompts_set = get_or<std::string>(j, "prompts_set", "llava");
  c.output_dir = resolve(get_or<std::string>(j, "output_dir", "out"));
  const auto work = get_or<std::string>(j, "work_dir", "");
  c.work_dir = work.empty() ? c.output_dir / "_work" : resolve(work);
  const auto shards = get_or<std::int64_t>(j, "shard_count", 1);
  if (shards < 1) throw ConfigError("shard_count must be >= 1");
  c.shard_count = static_cast<std::size_t>(shards);
  c.rng_seed = get_or<std::uint64_t>(j, "rng_seed", 0);
  c.parallelism = get_or<int>(j, "parallelism", 4);

  if (j.contains("features") && j.at("features").is_string()) {
    c.features = parse_features(j.at("features").get<std::string>());
  } else {
    const auto& f = section(j, "features");
    c.features.filtering = get_or<bool>(f, "filtering", true);
    c.features.bbox_conversion = get_or<bool>(f, "bbox_conversion", true);
    c.features.reduction = get_or<bool>(f, "reduction", true);
  }

  const auto& g = section(j, "generation");
  c.generation.reduction_threshold = get_or<double>(g, "reduction_threshold", 0.85);
  const auto l_min = get_or<std::int64_t>(g, "min_info_chars", 100);
  if (l_min < 1) throw ConfigError("generation.min_info_chars must be > 0");
  c.generation.min_info_chars = static_cast<std::size_t>(l_min);
  c.generation.max_retries = get_or<int>(g, "max_retries", 3);
  c.generation.max_turns = get_or<int>(g, "max_turns", 12);
  c.generation.reduction_mode = parse_reduction_mode(get_or<std::string>(g, "reduction_mode", "llm"));
  c.batch_qa = get_or<bool>(g, "batch_qa", true);

  const auto& s = section(j, "scene");
  c.scene.spatial_threshold = get_or<double>(s, "spatial_threshold", c.scene.spatial_threshold);
  c.scene.mask_threshold = get_or<double>(s, "mask_threshold", c.scene.mask_threshold);
  c.scene.containment_threshold = get_or<double>(s, "containment_threshold", c.scene.containment_threshold);
  c.scene.depth_tolerance = get_or<double>(s, "depth_tolerance", c.scene.depth_tolerance);
  c.scene.count_exact_max = get_or<int>(s, "count_exact_max", c.scene.count_exact_max);
  c.scene.count_several_max = get_or<int>(s, "count_several_max", c.scene.count_several_max);

  const auto& gw = section(j, "gateway");
  c.gateway.endpoint_url = get_or<std::string>(gw, "endpoint_url", c.gateway.endpoint_url);
  c.gateway.api_key = get_or<std::string>(gw, "api_key", "");
  c.gateway.model = get_or<std::string>(gw, "model", c.gateway.model);
  c.gateway.max_in_flight = get_or<int>(gw, "max_in_flight", c.gateway.max_in_flight);
  c.gateway.retry_budget = get_or<int>(gw, "retry_budget", c.gateway.retry_budget);
  c.gateway.backoff_base_ms = get_or<int>(gw, "backoff_base_ms", c.gateway.backoff_base_ms);
  c.gateway.backoff_max_ms = get_or<int>(gw, "backoff_max_ms", c.gateway.backoff_max_ms);
  c.gateway.timeout_ms = get_or<int>(gw, "timeout_ms", c.gateway.timeout_ms);
  const auto mode = get_or<std::string>(gw, "mode", "live");
  if (mode == "live") c.gateway.mode = GatewayMode::live;
  else if (mode == "scripted") c.gateway.mode = GatewayMode::scripted;
  else throw ConfigError(fmt::format("gateway.mode must be live or scripted, got '{}'", mode));
  c.scripted.fixtures = resolve(get_or<std::string>(gw, "fixtures", ""));
  try {
    c.scripted.fallback = parse_fallback_rule(get_or<std::string>(gw, "fallback", "simulate"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto& faults = section(gw, "faults");
  c.scripted.faults.http_429_rate = get_or<double>(faults, "http_429_rate", 0);
  c.scripted.faults.http_500_rate = get_or<double>(faults, "http_500_rate", 0);
  c.scripted.faults.garbage_generation_rate = get_or<double>(faults, "garbage_generation_rate", 0);
  c.scripted.faults.reject_verification_rate = get_or<double>(faults, "reject_verification_rate", 0);
  c.scripted.faults.seed = get_or<std::uint64_t>(faults, "seed", 1);

  const auto& cl = section(j, "claims");
  c.claims.staleness = std::chrono::seconds(get_or<std::int64_t>(cl, "staleness_s", 300));
  c.claims.heartbeat = std::chrono::seconds(get_or<std::int64_t>(cl, "heartbeat_s", 30));

  const auto& sim = section(j, "simulation");
  c.llm_latency_ms = get_or<int>(sim, "llm_latency_ms", 0);
  c.sidecar_ms_per_image = get_or<int>(sim, "sidecar_ms_per_image", 0);

  if (const char* url = std::getenv("VIG_ENDPOINT_URL"); url && *url) c.gateway.endpoint_url = url;
  if (const char* key = std::getenv("VIG_API_KEY"); key && *key) c.gateway.api_key = key;
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config '{}': {}", path.string(), e.what()));
  }
  return config_from_json(j, fs::absolute(path).parent_path());
}

std::unique_ptr<Gateway> make_gateway(const PipelineConfig& cfg) {
  if (cfg.gateway.mode == GatewayMode::scripted) {
    ScriptedOptions opts;
    opts.fallback = cfg.scripted.fallback;
    opts.latency_ms = cfg.llm_latency_ms;
    opts.faults = cfg.scripted.faults;
    std::map<std::string, std::string> fixtures;
    if (!cfg.scripted.fixtures.empty()) fixtures = load_fixtures(cfg.scripted.fixtures);
    auto responder = std::make_shared<ScriptedResponder>(std::move(fixtures), opts);
    return std::make_unique<Gateway>(cfg.gateway, make_in_process_transport(responder));
  }
  return std::make_unique<Gateway>(
      cfg.gateway, make_http_transport(cfg.gateway.endpoint_url, cfg.gateway.api_key, cfg.gateway.timeout_ms));
}

PromptLibrary load_prompts(const PipelineConfig& cfg) {
  if (cfg.prompts_dir.empty()) {
    if (cfg.prompts_set != "llava") {
      throw ConfigError(fmt::format("prompt set '{}' needs prompts_dir", cfg.prompts_set));
    }
    return PromptLibrary::builtin();
  }
  try {
    return PromptLibrary::load(cfg.prompts_dir, cfg.prompts_set);
  } catch (const PromptError& e) {
    throw ConfigError(e.what());
  }
}

fs::path grouped_manifest_path(const PipelineConfig& cfg) { return cfg.work_dir / "grouped.jsonl"; }
fs::path plan_dir(const PipelineConfig& cfg) { return cfg.work_dir / "plan"; }
fs::path claims_dir(const PipelineConfig& cfg) { return cfg.work_dir / "claims"; }
fs::path shard_output_path(const PipelineConfig& cfg, std::size_t shard_id) {
  return cfg.output_dir / (shard_name(shard_id) + ".jsonl");
}
fs::path errors_path(const PipelineConfig& cfg) { return cfg.output_dir / "errors.jsonl"; }

IngestSummary run_ingest(const PipelineConfig& cfg) {
  const auto registry = DatasetRegistry::load(cfg.registry_path);
  auto loaded = load_all(registry);
  LinkResolver resolver(registry);
  fs::create_directories(cfg.work_dir);

  GroupOptions opts;
  opts.spill_dir = cfg.work_dir / "spill";
  const auto out_path = grouped_manifest_path(cfg);
  const auto tmp = fs::path(out_path.string() + fmt::format(".tmp{}", ::getpid()));
  IngestSummary summary;
  summary.records = loaded.records.size();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", tmp.string()));
    ImageGrouper grouper(opts);
    for (auto& r : loaded.records) {
      const auto key = resolver.key_for(r.image);
      grouper.add(key, std::move(r));
    }
    grouper.finish([&](const LinkKey& key, MetadataBundle bundle) {
      out << to_grouped_line(key, bundle) << '\n';
      ++summary.images;
    });
    if (!out.flush()) throw IoError(fmt::format("write failed: {}", tmp.string()));
  }
  fs::rename(tmp, out_path);

  std::ofstream issues(cfg.work_dir / "issues.jsonl", std::ios::trunc);
  for (const auto& i : loaded.issues) {
    issues << json{{"dataset", i.dataset_id}, {"image_id", i.image_id}, {"field", i.field},
                   {"message", i.message}}.dump()
           << '\n';
  }
  summary.issues = loaded.issues.size();
  return summary;
}

ShardPlan run_plan(const PipelineConfig& cfg) {
  return plan_shards(grouped_manifest_path(cfg), cfg.shard_count, plan_dir(cfg));
}

std::uint64_t conversation_seed(std::uint64_t rng_seed, const std::string& link_key) {
  return text::mix64(rng_seed ^ text::fnv1a64(link_key));
}

std::string conversation_id(const std::string& link_key, std::uint64_t seed) {
  return link_key + "-" + text::hex64(seed);
}

namespace {

constexpr std::string_view kImageToken = "<image>";

json context_json(const ContextSet& ctx) {
  json arr = json::array();
  for (const auto& s : ctx.sentences) {
    arr.push_back({{"text", s.text}, {"origin", to_string(s.origin)}, {"source", s.source}});
  }
  return arr;
}

std::size_t count_occurrences(const std::string& s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

}  // namespace

json conversation_record(const std::string& id, const Conversation& conv, const std::string& link_key,
                         const json& extra) {
  json turns = json::array();
  json convs = json::array();
  for (std::size_t i = 0; i < conv.turns.size(); ++i) {
    const auto& t = conv.turns[i];
    const auto human = i == 0 ? std::string(kImageToken) + "\n" + t.human : t.human;
    convs.push_back({{"from", "human"}, {"value", human}});
    convs.push_back({{"from", "gpt"}, {"value", t.assistant}});
    turns.push_back({{"template_id", t.template_id}, {"iteration", t.iteration},
                     {"attempts", t.attempts}, {"verification", "pass"}});
  }
  const auto& p = conv.provenance;
  json quality = json::array();
  for (const auto& q : p.quality) quality.push_back({{"keep", q.keep}, {"verdict", q.verdict}});
  json prov = {
      {"link_key", link_key},
      {"image_meta", {{"dataset", conv.image.dataset_id}, {"image_id", conv.image.image_id},
                      {"uri", conv.image.uri}, {"width", conv.image.width}, {"height", conv.image.height}}},
      {"context_chars_initial", p.context_chars_initial},
      {"context_chars_final", p.context_chars_final},
      {"templates_used", p.templates_used},
      {"retries_total", p.retries_total},
      {"filtered_turns", p.filtered_turns},
      {"verification_failures", p.verification_failures},
      {"parse_failures", p.parse_failures},
      {"abandoned_iterations", p.abandoned_iterations},
      {"iterations", p.iterations},
      {"llm_calls", p.llm_calls},
      {"stop_reason", p.stop_reason},
      {"quality", quality},
      {"turns", turns},
  };
  for (const auto& [k, v] : extra.items()) prov[k] = v;
  return {{"id", id},
          {"image", conv.image.uri.empty() ? conv.image.image_id : conv.image.uri},
          {"conversations", convs},
          {"provenance", prov}};
}

Conversation conversation_from_record(const json& record) {
  try {
    Conversation conv;
    const auto& prov = record.at("provenance");
    const auto& meta = prov.at("image_meta");
    conv.image = {meta.at("dataset").get<std::string>(), meta.at("image_id").get<std::string>(),
                  meta.at("uri").get<std::string>(), meta.at("width").get<int>(), meta.at("height").get<int>()};
    const auto& convs = record.at("conversations");
    const auto& turns = prov.at("turns");
    if (convs.size() != 2 * turns.size()) throw ManifestError("conversations and provenance turns disagree");
    for (std::size_t i = 0; i < turns.size(); ++i) {
      Turn t;
      t.human = convs[2 * i].at("value").get<std::string>();
      if (i == 0 && t.human.starts_with(std::string(kImageToken) + "\n")) t.human.erase(0, kImageToken.size() + 1);
      t.assistant = convs[2 * i + 1].at("value").get<std::string>();
      t.template_id = turns[i].at("template_id").get<std::string>();
      t.iteration = turns[i].at("iteration").get<int>();
      t.attempts = turns[i].at("attempts").get<int>();
      conv.turns.push_back(std::move(t));
    }
    auto& p = conv.provenance;
    p.context_chars_initial = prov.at("context_chars_initial").get<std::size_t>();
    p.context_chars_final = prov.at("context_chars_final").get<std::size_t>();
    p.templates_used = prov.at("templates_used").get<std::vector<std::string>>();
    p.retries_total = prov.at("retries_total").get<int>();
    p.filtered_turns = prov.at("filtered_turns").get<int>();
    p.verification_failures = prov.at("verification_failures").get<int>();
    p.parse_failures = prov.at("parse_failures").get<int>();
    p.abandoned_iterations = prov.at("abandoned_iterations").get<int>();
    p.iterations = prov.at("iterations").get<int>();
    p.llm_calls = prov.at("llm_calls").get<int>();
    p.stop_reason = prov.at("stop_reason").get<std::string>();
    for (const auto& q : prov.at("quality")) {
      p.quality.push_back({q.at("keep").get<bool>(), q.at("verdict").get<std::string>()});
    }
    return conv;
  } catch (const json::exception& e) {
    throw ManifestError(fmt::format("bad conversation record: {}", e.what()));
  }
}

void append_line(const fs::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_CREAT | O_WRONLY | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError(fmt::format("cannot open {}: {}", path.string(), std::strerror(errno)));
  const std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const auto n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const auto err = std::strerror(errno);
      ::close(fd);
      throw IoError(fmt::format("write {}: {}", path.string(), err));
    }
    done += static_cast<std::size_t>(n);
  }
  ::close(fd);
}

void write_conversation(const fs::path& path, const std::string& id, const Conversation& conv,
                        const std::string& link_key, const json& extra) {
  append_line(path, conversation_record(id, conv, link_key, extra).dump());
}

std::vector<std::string> recover_output(const fs::path& path) {
  std::vector<std::string> ids;
  if (!fs::exists(path)) return ids;
  std::string content;
  {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  const auto last_nl = content.rfind('\n');
  const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (keep != content.size()) {
    fs::resize_file(path, keep);
    content.resize(keep);
  }
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      ids.push_back(json::parse(line).at("id").get<std::string>());
    } catch (const json::exception&) {
      // unreadable complete line; leave it for validate to report
    }
  }
  return ids;
}

std::vector<std::string> check_record_schema(const json& r) {
  std::vector<std::string> problems;
  if (!r.is_object()) return {"record is not an object"};
  for (const auto& key : {"id", "image"}) {
    if (!r.contains(key) || !r.at(key).is_string() || r.at(key).get<std::string>().empty()) {
      problems.push_back(fmt::format("'{}' must be a non-empty string", key));
    }
  }
  if (!r.contains("conversations") || !r.at("conversations").is_array()) {
    problems.emplace_back("'conversations' must be an array");
    return problems;
  }
  const auto& convs = r.at("conversations");
  if (convs.empty() || convs.size() % 2 != 0) {
    problems.push_back(fmt::format("'conversations' must hold human/gpt pairs, got {} entries", convs.size()));
  }
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& e = convs[i];
    const char* expected = i % 2 == 0 ? "human" : "gpt";
    if (!e.is_object() || e.size() != 2 || !e.contains("from") || !e.contains("value")) {
      problems.push_back(fmt::format("entry {} must be {{\"from\", \"value\"}}", i));
      continue;
    }
    if (!e.at("from").is_string() || e.at("from").get<std::string>() != expected) {
      problems.push_back(fmt::format("entry {} must be from '{}'", i, expected));
    }
    if (!e.at("value").is_string() || text::trim(e.at("value").get<std::string>()).empty()) {
      problems.push_back(fmt::format("entry {} has an empty value", i));
      continue;
    }
    const auto& v = e.at("value").get_ref<const std::string&>();
    tokens += count_occurrences(v, kImageToken);
    if (i == 0 && !v.starts_with(std::string(kImageToken) + "\n")) {
      problems.emplace_back("first human turn must start with the image token");
    }
  }
  if (tokens != 1) problems.push_back(fmt::format("image token appears {} times", tokens));
  if (!r.contains("provenance") || !r.at("provenance").is_object()) {
    problems.emplace_back("'provenance' must be an object");
    return problems;
  }
  const auto& p = r.at("provenance");
  for (const auto& key : {"context_chars_initial", "context_chars_final", "retries_total", "filtered_turns"}) {
    if (!p.contains(key) || !p.at(key).is_number_integer() || p.at(key).get<std::int64_t>() < 0) {
      problems.push_back(fmt::format("provenance.{} must be a non-negative integer", key));
    }
  }
  if (problems.empty() && p.at("context_chars_final").get<std::size_t>() > p.at("context_chars_initial").get<std::size_t>()) {
    problems.emplace_back("context_chars_final exceeds context_chars_initial");
  }
  if (!p.contains("templates_used") || !p.at("templates_used").is_array() ||
      p.at("templates_used").size() * 2 != convs.size()) {
    problems.emplace_back("provenance.templates_used must have one entry per turn");
  }
  return problems;
}

ImageOutcome process_image(const ImageJob& job, const PipelineRuntime& rt) {
  const auto& cfg = rt.cfg;
  const auto key = job.key.str();
  const auto seed = conversation_seed(cfg.rng_seed, key);
  ImageOutcome out;
  out.id = conversation_id(key, seed);
  std::string stage = "scene_tree";
  try {
    auto t0 = Clock::now();
    std::string tree_text;
    if (cfg.features.bbox_conversion && !job.bundle.boxes.empty()) {
      if (cfg.sidecar_ms_per_image > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(cfg.sidecar_ms_per_image));
      }
      tree_text = serialize_tree(build_scene(job.bundle.boxes, job.bundle.image, cfg.scene), job.bundle.image);
    }
    out.seconds.scene = seconds_since(t0);

    stage = "context_builder";
    t0 = Clock::now();
    ContextOptions co;
    co.max_retries = cfg.generation.max_retries;
    co.batch_qa = cfg.batch_qa;
    co.tree_boxes = cfg.features.bbox_conversion;
    const auto ctx = assemble_context(job.bundle, tree_text, rt.llm, rt.prompts.tasks, co);
    out.seconds.context = seconds_since(t0);

    stage = "instruction_gen";
    t0 = Clock::now();
    auto gp = cfg.generation;
    gp.quality_filter = cfg.features.filtering;
    gp.reduction = cfg.features.reduction;
    const auto conv = generate_conversation(ctx, rt.prompts, gp, rt.llm, seed);
    out.seconds.generation = seconds_since(t0);

    stage = "writer";
    t0 = Clock::now();
    const json extra = {{"seed", text::hex64(seed)},
                        {"features", to_string(cfg.features)},
                        {"scene_tree", tree_text},
                        {"context", context_json(ctx)}};
    out.record = conversation_record(out.id, conv, key, extra).dump();
    out.turns = static_cast<int>(conv.turns.size());
    out.seconds.write = seconds_since(t0);
  } catch (const Error& e) {
    out.error = json{{"id", out.id}, {"link_key", key}, {"image_id", job.bundle.image.image_id},
                     {"stage", stage}, {"kind", e.kind()}, {"reason", e.what()}}.dump();
  } catch (const std::exception& e) {
    out.error = json{{"id", out.id}, {"link_key", key}, {"image_id", job.bundle.image.image_id},
                     {"stage", stage}, {"kind", "exception"}, {"reason", e.what()}}.dump();
  }
  return out;
}

std::vector<ImageOutcome> process_batch(const std::vector<ImageJob>& jobs, const PipelineRuntime& rt,
                                        bool parallel) {
  std::vector<ImageOutcome> out(jobs.size());
  const long n = static_cast<long>(jobs.size());
  const int threads = std::max(1, rt.cfg.parallelism);
  if (!parallel || threads == 1) {
    for (long i = 0; i < n; ++i) out[i] = process_image(jobs[i], rt);
    return out;
  }
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long i = 0; i < n; ++i) out[i] = process_image(jobs[i], rt);
  return out;
}

json RunSummary::to_json() const {
  json stages = json::object();
  for (const auto& [name, u] : llm_stages) {
    stages[name] = {{"requests", u.requests}, {"failures", u.failures}, {"retries", u.retries},
                    {"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens},
                    {"latency_ms", u.latency_ms}};
  }
  return {{"shards_processed", shards_processed},
          {"images", images},
          {"conversations", conversations},
          {"skipped_existing", skipped_existing},
          {"failed", failed},
          {"turns", turns},
          {"wall_seconds", wall_seconds},
          {"conversations_per_hour", conversations_per_hour},
          {"stage_seconds", {{"scene_tree", stage_seconds.scene}, {"context_builder", stage_seconds.context},
                             {"instruction_gen", stage_seconds.generation}, {"writer", stage_seconds.write}}},
          {"llm", stages}};
}

namespace {

void prepare(const PipelineConfig& cfg) {
  fs::create_directories(cfg.work_dir);
  FileLock lock(cfg.work_dir / "prepare.lock");
  if (!fs::exists(grouped_manifest_path(cfg))) run_ingest(cfg);
  bool plan_ok = false;
  if (fs::exists(plan_dir(cfg) / "plan.json")) {
    try {
      plan_ok = load_shard_plan(plan_dir(cfg)).shards.size() == cfg.shard_count;
    } catch (const Error&) {
      plan_ok = false;
    }
  }
  if (!plan_ok) run_plan(cfg);
}

}  // namespace

RunSummary run_pipeline(const PipelineConfig& cfg, const RunOptions& options) {
  const auto start = Clock::now();
  cfg.validate();
  std::unique_ptr<Gateway> own;
  ChatModel* llm = options.llm;
  if (!llm) {
    own = make_gateway(cfg);
    if (cfg.gateway.mode == GatewayMode::live && !own->reachable()) {
      throw EndpointUnreachable(fmt::format("LLM endpoint {} is not reachable", cfg.gateway.endpoint_url));
    }
    llm = own.get();
  }
  const auto prompts = load_prompts(cfg);
  prepare(cfg);
  const auto plan = load_shard_plan(plan_dir(cfg));
  fs::create_directories(cfg.output_dir);

  std::vector<std::size_t> shard_ids;
  if (options.shards) {
    for (auto s : *options.shards) {
      if (s >= plan.shards.size()) throw ConfigError(fmt::format("shard {} out of range", s));
      shard_ids.push_back(s);
    }
  } else {
    for (std::size_t s = 0; s < plan.shards.size(); ++s) shard_ids.push_back(s);
  }

  std::ifstream manifest(plan.manifest, std::ios::binary);
  if (!manifest) throw IoError(fmt::format("cannot open {}", plan.manifest.string()));
  const PipelineRuntime rt{cfg, prompts, *llm};
  RunSummary summary;
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, cfg.parallelism)) * 2;

  for (const auto shard : shard_ids) {
    const auto claim = claim_shard(claims_dir(cfg), shard, options.worker_id, cfg.claims);
    if (!claim) continue;
    bool lost = false;
    {
      HeartbeatThread hb(*claim, std::chrono::duration_cast<std::chrono::milliseconds>(cfg.claims.heartbeat));
      const auto out_path = shard_output_path(cfg, shard);
      const auto existing = recover_output(out_path);
      const std::set<std::string> done(existing.begin(), existing.end());
      const auto& entries = plan.shards[shard];
      for (std::size_t begin = 0; begin < entries.size() && !lost; begin += chunk) {
        std::vector<ImageJob> jobs;
        for (std::size_t i = begin; i < std::min(entries.size(), begin + chunk); ++i) {
          auto [key, bundle] = parse_grouped_line(read_record_at(manifest, entries[i].offset));
          if (done.contains(conversation_id(key.str(), conversation_seed(cfg.rng_seed, key.str())))) {
            ++summary.skipped_existing;
            continue;
          }
          jobs.push_back({std::move(key), std::move(bundle)});
        }
        for (const auto& o : process_batch(jobs, rt, options.parallel)) {
          ++summary.images;
          summary.stage_seconds.scene += o.seconds.scene;
          summary.stage_seconds.context += o.seconds.context;
          summary.stage_seconds.generation += o.seconds.generation;
          summary.stage_seconds.write += o.seconds.write;
          if (o.record) {
            append_line(out_path, *o.record);
            ++summary.conversations;
            summary.turns += static_cast<std::size_t>(o.turns);
          } else {
            append_line(errors_path(cfg), *o.error);
            ++summary.failed;
          }
        }
        lost = hb.lost();
      }
    }
    if (lost) continue;  // someone else owns the shard now
    mark_done(claims_dir(cfg), shard);
    release_claim(*claim);
    ++summary.shards_processed;
  }

  summary.wall_seconds = seconds_since(start);
  summary.conversations_per_hour =
      summary.wall_seconds > 0 ? static_cast<double>(summary.conversations) * 3600.0 / summary.wall_seconds : 0;
  if (own) summary.llm_stages = own->metrics().stages;
  return summary;
}

}  // namespace vig
