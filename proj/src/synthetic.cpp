#include "vig/synthetic.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "vig/error.hpp"
#include "vig/mask.hpp"
#include "vig/prompt_manager.hpp"

namespace fs = std::filesystem;

namespace vig {

namespace {

struct Kind {
  const char* label;
  std::array<const char*, 3> parts;
  double min_frac, max_frac;  // size relative to the image
};

constexpr std::array<Kind, 6> kKinds{{
    {"table", {"cup", "plate", "laptop"}, 0.30, 0.45},
    {"person", {"shirt", "hat", "backpack"}, 0.20, 0.40},
    {"car", {"wheel", "door", "window"}, 0.25, 0.40},
    {"shelf", {"book", "box", "vase"}, 0.25, 0.40},
    {"dog", {"collar", "ear", "tail"}, 0.15, 0.25},
    {"bench", {"bag", "newspaper", "umbrella"}, 0.20, 0.35},
}};

constexpr std::array<const char*, 8> kColors{"red", "blue", "green", "white", "black", "yellow", "brown", "gray"};
constexpr std::array<const char*, 5> kScenes{"kitchen", "street", "park", "office", "living room"};

struct Rng {
  std::mt19937_64 gen;
  double unit() { return uniform01(gen); }
  double range(double lo, double hi) { return lo + (hi - lo) * unit(); }
  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(unit() * static_cast<double>(n)) % n; }
  bool chance(double p) { return unit() < p; }
};

Box rounded(double x, double y, double w, double h) {
  return {std::round(x), std::round(y), std::max(1.0, std::round(w)), std::max(1.0, std::round(h))};
}

BoxAnnotation make_box(Rng& rng, const SyntheticOptions& o, const std::string& label, const Box& b,
                       const std::string& source) {
  BoxAnnotation a;
  a.label = label;
  a.bbox = b;
  a.source = source;
  if (rng.chance(0.6)) a.attributes.push_back(kColors[rng.pick(kColors.size())]);
  if (rng.chance(o.mask_rate)) {
    // Inset rectangle so the mask differs from its box.
    const Box inner{b.x + 1, b.y + 1, std::max(1.0, b.w - 2), std::max(1.0, b.h - 2)};
    a.mask_rle = Mask::from_rect(o.width, o.height, inner).to_rle();
  }
  if (rng.chance(o.depth_rate)) a.depth_mean = std::round(rng.range(0.05, 0.95) * 100) / 100;
  return a;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& o) {
  SyntheticCorpus corpus;
  for (std::size_t i = 0; i < o.images; ++i) {
    Rng rng{std::mt19937_64(o.seed * 1000003ULL + i)};
    const auto stem = fmt::format("syn_{:06d}", i);
    const auto uri = fmt::format("images/{}.jpg", stem);
    const double W = o.width, H = o.height;

    MetadataBundle boxes;
    boxes.image = {"syn-boxes", stem, uri, o.width, o.height};
    std::vector<std::string> present;
    const std::size_t containers = 1 + rng.pick(3);
    // Containers sit in distinct horizontal bands so they do not nest.
    for (std::size_t c = 0; c < containers; ++c) {
      const auto& kind = kKinds[rng.pick(kKinds.size())];
      const double band = W / static_cast<double>(containers);
      const double w = std::min(band * 0.9, W * rng.range(kind.min_frac, kind.max_frac));
      const double h = H * rng.range(kind.min_frac, kind.max_frac) * 1.3;
      const double x = band * static_cast<double>(c) + rng.range(0, band - w);
      const double y = rng.range(0, H - h);
      const Box outer = rounded(x, y, w, h);
      boxes.boxes.push_back(make_box(rng, o, kind.label, outer, "syn-boxes"));
      present.push_back(kind.label);
      if (rng.chance(0.25)) {
        // Second annotation of the same object, as another detector would give.
        auto dup = boxes.boxes.back();
        dup.bbox = rounded(outer.x + 2, outer.y + 1, outer.w - 1, outer.h - 2);
        dup.source = "syn-boxes";
        boxes.boxes.push_back(dup);
      }
      const std::size_t parts = rng.pick(4);
      for (std::size_t p = 0; p < parts; ++p) {
        const char* part = kind.parts[rng.pick(kind.parts.size())];
        const std::size_t copies = rng.chance(0.3) ? 2 + rng.pick(4) : 1;
        for (std::size_t k = 0; k < copies; ++k) {
          const double pw = outer.w * rng.range(0.12, 0.3);
          const double ph = outer.h * rng.range(0.12, 0.3);
          const double px = outer.x + rng.range(0, outer.w - pw);
          const double py = outer.y + rng.range(0, outer.h - ph);
          boxes.boxes.push_back(make_box(rng, o, part, rounded(px, py, pw, ph), "syn-boxes"));
        }
        present.push_back(part);
      }
    }
    corpus.boxes.push_back(std::move(boxes));

    MetadataBundle caps;
    caps.image = {"syn-captions", std::to_string(i), uri, o.width, o.height};
    const auto* scene = kScenes[rng.pick(kScenes.size())];
    caps.captions.push_back({fmt::format("A photo of a {} with a {} in it.", scene, present.front()),
                             "syn-captions"});
    if (rng.chance(0.5)) {
      caps.captions.push_back(
          {fmt::format("The {} is clearly visible in this {} scene.", present.back(), scene), "syn-captions"});
    }
    corpus.captions.push_back(std::move(caps));

    MetadataBundle qa;
    qa.image = {"syn-qa", fmt::format("{:012d}", i), uri, o.width, o.height};
    const std::size_t n_qa = 1 + rng.pick(2);
    for (std::size_t q = 0; q < n_qa; ++q) {
      const auto& obj = present[rng.pick(present.size())];
      if (rng.chance(0.5)) {
        qa.qas.push_back({fmt::format("What color is the {}?", obj), kColors[rng.pick(kColors.size())], "syn-qa"});
      } else {
        qa.qas.push_back({fmt::format("Is there a {} in the picture?", obj), "Yes", "syn-qa"});
      }
    }
    corpus.qas.push_back(std::move(qa));
  }
  return corpus;
}

std::vector<MetadataBundle> synthetic_bundles(const SyntheticOptions& options) {
  const auto corpus = make_synthetic_corpus(options);
  std::vector<MetadataBundle> out;
  for (std::size_t i = 0; i < options.images; ++i) {
    std::vector<ValidationIssue> issues;
    auto merged = merge_bundles(corpus.boxes[i], corpus.captions[i]);
    merged = merge_bundles(merged, corpus.qas[i]);
    out.push_back(normalize_bundle(std::move(merged), issues));
  }
  return out;
}

fs::path write_synthetic_fixture(const fs::path& dir, const SyntheticOptions& options,
                                 const nlohmann::json& overrides) {
  fs::create_directories(dir / "manifests");
  const auto corpus = make_synthetic_corpus(options);
  auto write = [&](const std::string& name, const std::vector<MetadataBundle>& records) {
    std::ofstream out(dir / "manifests" / name, std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", (dir / "manifests" / name).string()));
    for (const auto& r : records) out << to_manifest_line(r) << '\n';
  };
  write("captions.jsonl", corpus.captions);
  write("boxes.jsonl", corpus.boxes);
  write("qa.jsonl", corpus.qas);

  const nlohmann::json registry = nlohmann::json::array({
      {{"dataset_id", "syn-captions"}, {"manifest_path", "manifests/captions.jsonl"}, {"kind", "captions"}},
      {{"dataset_id", "syn-boxes"}, {"manifest_path", "manifests/boxes.jsonl"}, {"kind", "boxes"}},
      {{"dataset_id", "syn-qa"}, {"manifest_path", "manifests/qa.jsonl"}, {"kind", "qa"}},
  });
  std::ofstream(dir / "registry.json", std::ios::trunc) << registry.dump(2) << '\n';

  nlohmann::json config = {
      {"registry", "registry.json"},
      {"output_dir", "out"},
      {"shard_count", 2},
      {"rng_seed", 1234},
      {"parallelism", 4},
      {"features", {{"filtering", true}, {"bbox_conversion", true}, {"reduction", true}}},
      {"gateway", {{"mode", "scripted"}, {"fallback", "simulate"}}},
  };
  config.merge_patch(overrides);
  std::ofstream(dir / "config.json", std::ios::trunc) << config.dump(2) << '\n';
  return dir / "config.json";
}

}  // namespace vig
