#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "vig/bench_harness.hpp"
#include "vig/error.hpp"
#include "vig/pipeline.hpp"
#include "vig/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string features;
  std::string fixtures;
  std::string worker_id = "worker-0";
  std::string shards;
  std::optional<std::uint64_t> seed;
};

vig::PipelineConfig configure(const Common& c) {
  if (c.config.empty()) throw vig::ConfigError("--config is required");
  auto cfg = vig::load_config(c.config);
  if (!c.features.empty()) cfg.features = vig::parse_features(c.features);
  if (c.seed) cfg.rng_seed = *c.seed;
  if (!c.fixtures.empty()) {
    cfg.gateway.mode = vig::GatewayMode::scripted;
    cfg.scripted.fixtures = fs::absolute(c.fixtures);
  }
  return cfg;
}

std::vector<std::size_t> parse_ids(const std::string& csv) {
  std::vector<std::size_t> ids;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      ids.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw vig::ConfigError(fmt::format("--shards: '{}' is not a shard id", item));
    }
  }
  return ids;
}

int cmd_ingest(const Common& c) {
  const auto cfg = configure(c);
  cfg.validate();
  const auto s = vig::run_ingest(cfg);
  fmt::print("{}\n", json{{"records", s.records}, {"images", s.images}, {"issues", s.issues},
                          {"grouped_manifest", vig::grouped_manifest_path(cfg).string()}}.dump());
  return 0;
}

int cmd_plan(const Common& c) {
  auto cfg = configure(c);
  if (!c.shards.empty()) {
    const auto ids = parse_ids(c.shards);
    if (ids.size() != 1 || ids.front() == 0) throw vig::ConfigError("plan --shards takes one count >= 1");
    cfg.shard_count = ids.front();
  }
  cfg.validate();
  if (!fs::exists(vig::grouped_manifest_path(cfg))) vig::run_ingest(cfg);
  const auto plan = vig::run_plan(cfg);
  json sizes = json::array();
  for (const auto& s : plan.shards) sizes.push_back(s.size());
  fmt::print("{}\n", json{{"shard_count", plan.shards.size()}, {"records", plan.total()}, {"sizes", sizes}}.dump());
  return 0;
}

int cmd_run(const Common& c) {
  const auto cfg = configure(c);
  vig::RunOptions opts;
  opts.worker_id = c.worker_id;
  if (!c.shards.empty()) opts.shards = parse_ids(c.shards);
  const auto summary = vig::run_pipeline(cfg, opts);
  const auto j = summary.to_json();
  std::ofstream(cfg.output_dir / fmt::format("summary-{}.json", c.worker_id), std::ios::trunc) << j.dump(2) << '\n';
  fmt::print("{}\n", j.dump());
  return 0;
}

int cmd_tree(const Common& c, const std::string& manifest, const std::string& image, std::size_t limit) {
  vig::SceneTreeParams params;
  fs::path source = manifest;
  if (!c.config.empty()) {
    const auto cfg = configure(c);
    params = cfg.scene;
    if (source.empty()) {
      cfg.validate();
      if (!fs::exists(vig::grouped_manifest_path(cfg))) vig::run_ingest(cfg);
      source = vig::grouped_manifest_path(cfg);
    }
  }
  if (source.empty()) throw vig::ConfigError("tree needs --config or --manifest");
  std::ifstream in(source);
  if (!in) throw vig::ConfigError(fmt::format("cannot open {}", source.string()));
  std::string line;
  std::size_t shown = 0;
  while (std::getline(in, line) && shown < limit) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const auto bundle = vig::from_manifest_json(j);
    const std::string key = j.value("link_key", bundle.image.dataset_id + ":" + bundle.image.image_id);
    if (!image.empty() && key != image && bundle.image.image_id != image) continue;
    const auto tree = vig::build_scene(bundle.boxes, bundle.image, params);
    fmt::print("# {} ({}x{})\n{}", key, bundle.image.width, bundle.image.height,
               vig::serialize_tree(tree, bundle.image));
    ++shown;
  }
  return 0;
}

int cmd_bench(const vig::BenchOptions& o, const std::string& json_out) {
  const auto report = vig::run_efficiency_bench(o);
  fmt::print("{}", vig::format_bench_table(report));
  if (!json_out.empty()) std::ofstream(json_out, std::ios::trunc) << report.to_json().dump(2) << '\n';
  return 0;
}

int cmd_validate(const Common& c, const std::vector<std::string>& manifests,
                 const std::vector<std::string>& outputs) {
  std::size_t records = 0, problems = 0;
  auto lint_file = [&](const fs::path& path, bool output) {
    std::ifstream in(path);
    if (!in) throw vig::ConfigError(fmt::format("cannot open {}", path.string()));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      ++records;
      std::vector<std::string> found;
      try {
        const auto j = json::parse(line);
        if (output) {
          found = vig::check_record_schema(j);
        } else {
          for (const auto& i : vig::lint_bundle(vig::from_manifest_json(j))) {
            found.push_back(fmt::format("{}: {}", i.field, i.message));
          }
        }
      } catch (const std::exception& e) {
        found.emplace_back(e.what());
      }
      for (const auto& f : found) fmt::print("{}:{}: {}\n", path.string(), n, f);
      problems += found.size();
    }
  };
  std::vector<fs::path> to_lint(manifests.begin(), manifests.end());
  if (!c.config.empty()) {
    const auto cfg = configure(c);
    const auto registry = vig::DatasetRegistry::load(cfg.registry_path);
    for (const auto& d : registry.datasets()) {
      if (d.format == vig::DatasetFormat::manifest) to_lint.emplace_back(d.manifest_path);
    }
  }
  for (const auto& p : to_lint) lint_file(p, false);
  for (const auto& p : outputs) lint_file(p, true);
  fmt::print("{} records, {} problems\n", records, problems);
  return problems == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Builds visual instruction-tuning conversations from image metadata."};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "Pipeline config (JSON)");
    sub->add_option("--features", c.features, "filtering,bbox,reduction | all | none");
    sub->add_option("--seed", c.seed, "Override rng_seed");
    sub->add_option("--scripted-fixtures", c.fixtures, "Use the scripted LLM with these fixtures");
  };

  auto* ingest = app.add_subcommand("ingest", "Load, normalize and group every registered dataset");
  add_common(ingest);
  auto* plan = app.add_subcommand("plan", "Partition the grouped manifest into shards");
  add_common(plan);
  plan->add_option("--shards", c.shards, "Shard count (default: config shard_count)");
  auto* run = app.add_subcommand("run", "Claim shards and generate conversations");
  add_common(run);
  run->add_option("--worker-id", c.worker_id, "Name written into claim files");
  run->add_option("--shards", c.shards, "Comma-separated shard ids (default: all)");

  auto* tree = app.add_subcommand("tree", "Print the ASCII scene tree of grouped records");
  add_common(tree);
  std::string tree_manifest, tree_image;
  std::size_t tree_limit = 5;
  tree->add_option("--manifest", tree_manifest, "Manifest or grouped manifest to read");
  tree->add_option("--image", tree_image, "Only this link key or image id");
  tree->add_option("--limit", tree_limit, "Maximum number of trees");

  auto* bench = app.add_subcommand("bench", "Efficiency table over the ablation rows");
  vig::BenchOptions bo;
  std::string bench_json;
  int sidecar = -1;
  bench->add_option("--images", bo.images, "Synthetic images");
  bench->add_option("--latency-ms", bo.llm_latency_ms, "Scripted LLM latency per call");
  bench->add_option("--parallelism", bo.parallelism, "Concurrent images");
  bench->add_option("--sidecar-ms", sidecar, "Simulated mask/depth cost per image (default: calibrated)");
  bench->add_option("--seed", bo.seed, "Corpus seed");
  bench->add_option("--json", bench_json, "Also write the report as JSON");

  auto* validate = app.add_subcommand("validate", "Lint manifests and output records");
  add_common(validate);
  std::vector<std::string> manifests, outputs;
  validate->add_option("--manifest", manifests, "Unified manifest file(s)");
  validate->add_option("--output", outputs, "Conversation output file(s)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic multi-dataset fixture with a scripted config");
  vig::SyntheticOptions so;
  std::string synth_dir;
  synth->add_option("dir", synth_dir, "Target directory")->required();
  synth->add_option("--images", so.images, "Number of pictures");
  synth->add_option("--seed", so.seed, "Corpus seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) return cmd_ingest(c);
    if (*plan) return cmd_plan(c);
    if (*run) return cmd_run(c);
    if (*tree) return cmd_tree(c, tree_manifest, tree_image, tree_limit);
    if (*bench) {
      if (sidecar >= 0) bo.sidecar_ms = sidecar;
      return cmd_bench(bo, bench_json);
    }
    if (*validate) return cmd_validate(c, manifests, outputs);
    if (*synth) {
      fmt::print("{}\n", vig::write_synthetic_fixture(synth_dir, so).string());
      return 0;
    }
  } catch (const vig::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const vig::EndpointUnreachable& e) {
    fmt::print(stderr, "endpoint unreachable: {}\n", e.what());
    return 3;
  } catch (const vig::Error& e) {
    fmt::print(stderr, "{}: {}\n", e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
