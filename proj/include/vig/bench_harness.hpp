#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vig/pipeline.hpp"

namespace vig {

struct BenchOptions {
  std::size_t images = 500;
  int llm_latency_ms = 2;
  int parallelism = 16;
  std::uint64_t seed = 7;
  // Simulated mask/depth cost per image. When unset it is calibrated from
  // the measured direct-generation cost times sidecar_ratio.
  std::optional<int> sidecar_ms;
  double sidecar_ratio = 396.0 / 50.0;
};

struct BenchRow {
  std::string name;
  FeatureFlags features;
  double seconds = 0;
  std::size_t images = 0;
  std::size_t conversations = 0;
  std::size_t turns = 0;
  std::int64_t llm_requests = 0;
  double conversations_per_hour = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;  // Direct, +Filtering, +BBox, +Reduction, Full
  int sidecar_ms = 0;
  BenchOptions options;

  const BenchRow& row(const std::string& name) const;  // throws std::out_of_range
  nlohmann::json to_json() const;
};

// Runs the synthetic corpus through every ablation row with the scripted
// LLM at fixed latency and records wall time.
BenchReport run_efficiency_bench(const BenchOptions& options);

std::string format_bench_table(const BenchReport& report);

}  // namespace vig
