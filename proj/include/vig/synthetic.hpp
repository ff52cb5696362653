#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "vig/metadata.hpp"

namespace vig {

struct SyntheticOptions {
  std::size_t images = 25;
  std::uint64_t seed = 7;
  int width = 640;
  int height = 480;
  double mask_rate = 0.5;   // fraction of boxes carrying an RLE mask
  double depth_rate = 0.5;  // fraction of boxes carrying a depth value
};

// Three datasets over the same pictures: captions, boxes, and QA. Each
// uses its own image_id spelling; uris share the file stem.
struct SyntheticCorpus {
  std::vector<MetadataBundle> captions;
  std::vector<MetadataBundle> boxes;
  std::vector<MetadataBundle> qas;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options);

// One merged bundle per picture (what ingestion produces for the corpus).
std::vector<MetadataBundle> synthetic_bundles(const SyntheticOptions& options);

// Writes the three manifests, registry.json and config.json into dir and
// returns the config path. `overrides` is merged into the config object.
std::filesystem::path write_synthetic_fixture(const std::filesystem::path& dir,
                                              const SyntheticOptions& options,
                                              const nlohmann::json& overrides = nlohmann::json::object());

}  // namespace vig
