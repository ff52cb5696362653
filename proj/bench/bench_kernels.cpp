// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

#include "vig/ingestion.hpp"
#include "vig/pipeline.hpp"
#include "vig/scene_tree.hpp"
#include "vig/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<vig::SceneRegion> regions(std::size_t n) {
  std::mt19937_64 rng(3);
  const vig::ImageRef image{"b", "1", "b.jpg", 640, 480};
  std::uniform_real_distribution<double> x(0, 560), y(0, 400), s(8, 80);
  std::vector<vig::BoxAnnotation> boxes;
  for (std::size_t i = 0; i < n; ++i) {
    vig::BoxAnnotation a;
    a.label = i % 3 ? "cup" : "person";
    a.bbox = {x(rng), y(rng), s(rng), s(rng)};
    a.mask_rle = vig::Mask::from_rect(640, 480, a.bbox).to_rle();
    a.source = "b";
    boxes.push_back(a);
  }
  return vig::regions_from_boxes(boxes, image);
}

void BM_PairwiseOverlaps(benchmark::State& state) {
  const auto r = regions(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(vig::pairwise_overlaps(r));
}

void BM_PairwiseOverlapsSerial(benchmark::State& state) {
  const auto r = regions(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(vig::pairwise_overlaps_serial(r));
}

BENCHMARK(BM_PairwiseOverlaps)->Arg(20)->Arg(80);
BENCHMARK(BM_PairwiseOverlapsSerial)->Arg(20)->Arg(80);

// Shared fixture on disk for the ingestion and pipeline kernels.
const vig::PipelineConfig& fixture() {
  static const vig::PipelineConfig cfg = [] {
    const auto dir = fs::temp_directory_path() / "vig_bench_kernels";
    fs::remove_all(dir);
    return vig::load_config(vig::write_synthetic_fixture(dir, {.images = 300}));
  }();
  return cfg;
}

void BM_LoadAll(benchmark::State& state) {
  const auto reg = vig::DatasetRegistry::load(fixture().registry_path);
  const bool parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(vig::load_all(reg, parallel));
  state.SetLabel(parallel ? "parallel" : "serial");
}

BENCHMARK(BM_LoadAll)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_ProcessBatch(benchmark::State& state) {
  auto cfg = fixture();
  cfg.llm_latency_ms = 1;
  const auto bundles = vig::synthetic_bundles({.images = 48});
  std::vector<vig::ImageJob> jobs;
  for (const auto& b : bundles) jobs.push_back({vig::link_key(b.image, "file-stem"), b});
  auto gw = vig::make_gateway(cfg);
  const auto prompts = vig::load_prompts(cfg);
  const vig::PipelineRuntime rt{cfg, prompts, *gw};
  const bool parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(vig::process_batch(jobs, rt, parallel));
  state.SetLabel(parallel ? "parallel" : "serial");
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(jobs.size()));
}

BENCHMARK(BM_ProcessBatch)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
