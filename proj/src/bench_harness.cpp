#include "vig/bench_harness.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "vig/synthetic.hpp"

namespace vig {

const BenchRow& BenchReport::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("no bench row " + name);
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"name", r.name}, {"features", to_string(r.features)}, {"seconds", r.seconds},
                   {"images", r.images}, {"conversations", r.conversations}, {"turns", r.turns},
                   {"llm_requests", r.llm_requests}, {"conversations_per_hour", r.conversations_per_hour}});
  }
  return {{"rows", arr},
          {"sidecar_ms_per_image", sidecar_ms},
          {"images", options.images},
          {"llm_latency_ms", options.llm_latency_ms},
          {"parallelism", options.parallelism}};
}

namespace {

BenchRow run_row(const std::string& name, FeatureFlags features, const std::vector<ImageJob>& jobs,
                 const BenchOptions& o, int sidecar_ms) {
  PipelineConfig cfg;
  cfg.features = features;
  cfg.parallelism = o.parallelism;
  cfg.rng_seed = o.seed;
  cfg.gateway.mode = GatewayMode::scripted;
  cfg.gateway.max_in_flight = o.parallelism;
  cfg.llm_latency_ms = o.llm_latency_ms;
  cfg.sidecar_ms_per_image = sidecar_ms;
  const auto gateway = make_gateway(cfg);
  const auto prompts = PromptLibrary::builtin();
  const PipelineRuntime rt{cfg, prompts, *gateway};

  const auto t0 = std::chrono::steady_clock::now();
  const auto outcomes = process_batch(jobs, rt);
  BenchRow row;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  row.name = name;
  row.features = features;
  row.images = jobs.size();
  for (const auto& out : outcomes) {
    if (out.record) ++row.conversations;
    row.turns += static_cast<std::size_t>(out.turns);
  }
  for (const auto& [_, usage] : gateway->metrics().stages) row.llm_requests += usage.requests;
  row.conversations_per_hour = row.seconds > 0 ? static_cast<double>(row.conversations) * 3600.0 / row.seconds : 0;
  return row;
}

}  // namespace

BenchReport run_efficiency_bench(const BenchOptions& o) {
  SyntheticOptions so;
  so.images = o.images;
  so.seed = o.seed;
  std::vector<ImageJob> jobs;
  for (auto& b : synthetic_bundles(so)) {
    LinkKey key{"file-stem", uri_file_stem(b.image.uri)};
    jobs.push_back({std::move(key), std::move(b)});
  }

  BenchReport report;
  report.options = o;
  report.rows.push_back(run_row("Direct Generation", {false, false, false}, jobs, o, 0));
  if (o.sidecar_ms) {
    report.sidecar_ms = *o.sidecar_ms;
  } else {
    // Per-image wall cost of direct generation, scaled back up by the
    // parallelism because the sidecar sleeps inside each image's task.
    const double direct_ms = report.rows.front().seconds * 1000.0 / static_cast<double>(std::max<std::size_t>(1, o.images));
    report.sidecar_ms = static_cast<int>(std::lround(o.sidecar_ratio * direct_ms * o.parallelism));
  }
  report.rows.push_back(run_row("+Filtering", {true, false, false}, jobs, o, 0));
  report.rows.push_back(run_row("+BBox", {false, true, false}, jobs, o, report.sidecar_ms));
  report.rows.push_back(run_row("+Reduction", {false, false, true}, jobs, o, 0));
  report.rows.push_back(run_row("Full Processing", {true, true, true}, jobs, o, report.sidecar_ms));
  return report;
}

std::string format_bench_table(const BenchReport& report) {
  std::string out = fmt::format("{:<18} {:>9} {:>5} {:>9} {:>10} {:>9} {:>10} {:>14}\n", "Variant", "Filtering",
                                "BBox", "Reduction", "Time (s)", "Turns", "LLM calls", "Conv/hour");
  for (const auto& r : report.rows) {
    out += fmt::format("{:<18} {:>9} {:>5} {:>9} {:>10.2f} {:>9} {:>10} {:>14.0f}\n", r.name,
                       r.features.filtering ? "x" : "", r.features.bbox_conversion ? "x" : "",
                       r.features.reduction ? "x" : "", r.seconds, r.turns, r.llm_requests,
                       r.conversations_per_hour);
  }
  out += fmt::format("images={} llm_latency_ms={} parallelism={} sidecar_ms_per_image={}\n", report.options.images,
                     report.options.llm_latency_ms, report.options.parallelism, report.sidecar_ms);
  return out;
}

}  // namespace vig
