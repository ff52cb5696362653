#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vig/metadata.hpp"

namespace vig {

enum class DatasetKind { captions, boxes, qa, mixed };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view s);

// How a dataset's files are read. `manifest` is the unified JSONL format;
// the others are example converters for common public layouts.
enum class DatasetFormat { manifest, coco_captions, coco_instances, qa_jsonl };

std::string to_string(DatasetFormat format);
DatasetFormat parse_dataset_format(std::string_view s);

struct DatasetDescriptor {
  std::string dataset_id;
  std::string manifest_path;
  DatasetKind kind = DatasetKind::mixed;
  std::string link_namespace = "file-stem";
  DatasetFormat format = DatasetFormat::manifest;
  // JSONL of {"dataset","image_id","canonical_id"}; optional.
  std::string id_map_path;

  friend bool operator==(const DatasetDescriptor&, const DatasetDescriptor&) = default;
};

struct LinkKey {
  std::string ns;
  std::string canonical_id;

  std::string str() const { return ns + ":" + canonical_id; }

  friend bool operator==(const LinkKey&, const LinkKey&) = default;
  friend auto operator<=>(const LinkKey&, const LinkKey&) = default;
};

// Default convention: namespace "file-stem" keys on the lowercase file stem
// of the uri. Any other namespace keys on the lowercased image_id, with
// leading zeros stripped from all-digit ids so "000123" and "123" link.
LinkKey link_key(const ImageRef& image, std::string_view ns);

class DatasetRegistry {
 public:
  // Idempotent for identical descriptors; throws DuplicateDataset when the
  // id is already bound to a different descriptor.
  void register_dataset(const DatasetDescriptor& d);

  const DatasetDescriptor* find(std::string_view dataset_id) const;
  const std::vector<DatasetDescriptor>& datasets() const { return datasets_; }
  std::size_t size() const { return datasets_.size(); }

  // Registry config: JSON array of descriptor objects. Relative paths are
  // resolved against the config file's directory.
  static DatasetRegistry load(const std::filesystem::path& config_path);

 private:
  std::vector<DatasetDescriptor> datasets_;
};

// Resolves link keys, honoring per-dataset id maps.
class LinkResolver {
 public:
  explicit LinkResolver(const DatasetRegistry& registry);

  void add_mapping(const std::string& dataset_id, const std::string& image_id,
                   const std::string& canonical_id);

  LinkKey key_for(const ImageRef& image) const;

 private:
  std::unordered_map<std::string, std::string> namespaces_;
  std::unordered_map<std::string, std::string> id_map_;  // "dataset\x1fimage_id" -> canonical
};

struct LoadResult {
  std::vector<MetadataBundle> records;
  std::vector<ValidationIssue> issues;
};

// Reads one dataset through its adapter and normalizes every record.
LoadResult load_dataset(const DatasetDescriptor& d);

// Reads every registered dataset; files are parsed in parallel, results
// concatenated in registry order. `parallel = false` is the serial reference.
LoadResult load_all(const DatasetRegistry& registry, bool parallel = true);

struct GroupOptions {
  // Records held in memory before a sorted run is spilled to disk.
  std::size_t max_resident = 200000;
  std::filesystem::path spill_dir;  // defaults to a temp directory
};

// Groups bundles by link key and folds each group with merge_bundles.
// Output is ordered by link key. Memory stays bounded by max_resident:
// larger inputs are sorted in runs and k-way merged from disk.
class ImageGrouper {
 public:
  using Sink = std::function<void(const LinkKey&, MetadataBundle)>;

  explicit ImageGrouper(GroupOptions options = {});
  ~ImageGrouper();
  ImageGrouper(const ImageGrouper&) = delete;
  ImageGrouper& operator=(const ImageGrouper&) = delete;

  void add(const LinkKey& key, MetadataBundle bundle);
  void finish(const Sink& sink);

  std::size_t spilled_runs() const { return runs_.size(); }

 private:
  struct Entry {
    LinkKey key;
    std::uint64_t ordinal;
    MetadataBundle bundle;
  };

  void spill();

  GroupOptions options_;
  std::vector<Entry> pending_;
  std::vector<std::filesystem::path> runs_;
  std::filesystem::path owned_dir_;
  std::uint64_t next_ordinal_ = 0;
};

// In-memory convenience wrapper over ImageGrouper.
std::vector<std::pair<LinkKey, MetadataBundle>> group_by_image(
    const std::vector<MetadataBundle>& records, const LinkResolver& resolver,
    GroupOptions options = {});

// Grouped manifest: unified manifest lines plus a "link_key" field.
std::string to_grouped_line(const LinkKey& key, const MetadataBundle& bundle);
std::pair<LinkKey, MetadataBundle> parse_grouped_line(std::string_view line);

}  // namespace vig
