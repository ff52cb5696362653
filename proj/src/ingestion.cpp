#include "vig/ingestion.hpp"

#include <atomic>
#include <fstream>
#include <queue>
#include <unistd.h>

#include <fmt/format.h>
#include <omp.h>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace vig {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::captions: return "captions";
    case DatasetKind::boxes: return "boxes";
    case DatasetKind::qa: return "qa";
    case DatasetKind::mixed: return "mixed";
  }
  return "mixed";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "captions") return DatasetKind::captions;
  if (s == "boxes") return DatasetKind::boxes;
  if (s == "qa") return DatasetKind::qa;
  if (s == "mixed") return DatasetKind::mixed;
  throw ConfigError(fmt::format("unknown dataset kind '{}'", s));
}

std::string to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::manifest: return "manifest";
    case DatasetFormat::coco_captions: return "coco_captions";
    case DatasetFormat::coco_instances: return "coco_instances";
    case DatasetFormat::qa_jsonl: return "qa_jsonl";
  }
  return "manifest";
}

DatasetFormat parse_dataset_format(std::string_view s) {
  if (s == "manifest") return DatasetFormat::manifest;
  if (s == "coco_captions") return DatasetFormat::coco_captions;
  if (s == "coco_instances") return DatasetFormat::coco_instances;
  if (s == "qa_jsonl") return DatasetFormat::qa_jsonl;
  throw ConfigError(fmt::format("unknown dataset format '{}'", s));
}

LinkKey link_key(const ImageRef& image, std::string_view ns) {
  if (ns.empty() || ns == "file-stem") {
    auto stem = uri_file_stem(image.uri);
    if (stem.empty()) stem = text::to_lower(text::trim(image.image_id));
    return {"file-stem", stem};
  }
  auto id = text::to_lower(text::trim(image.image_id));
  const bool numeric = !id.empty() && std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isdigit(c);
  });
  if (numeric) {
    const auto nz = id.find_first_not_of('0');
    id = nz == std::string::npos ? "0" : id.substr(nz);
  }
  return {std::string(ns), id};
}

void DatasetRegistry::register_dataset(const DatasetDescriptor& d) {
  if (d.dataset_id.empty()) throw ConfigError("dataset descriptor without dataset_id");
  if (const auto* existing = find(d.dataset_id)) {
    if (*existing == d) return;
    throw DuplicateDataset(
        fmt::format("dataset '{}' already registered with a different descriptor", d.dataset_id));
  }
  datasets_.push_back(d);
}

const DatasetDescriptor* DatasetRegistry::find(std::string_view dataset_id) const {
  for (const auto& d : datasets_) {
    if (d.dataset_id == dataset_id) return &d;
  }
  return nullptr;
}

DatasetRegistry DatasetRegistry::load(const fs::path& config_path) {
  std::ifstream in(config_path);
  if (!in) throw ConfigError(fmt::format("cannot open registry '{}'", config_path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("registry '{}': {}", config_path.string(), e.what()));
  }
  if (!j.is_array()) throw ConfigError("registry must be a JSON array of dataset descriptors");
  const auto base = config_path.parent_path();
  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
  };
  DatasetRegistry reg;
  for (const auto& item : j) {
    try {
      DatasetDescriptor d;
      d.dataset_id = item.at("dataset_id").get<std::string>();
      d.manifest_path = resolve(item.at("manifest_path").get<std::string>());
      d.kind = parse_dataset_kind(item.value("kind", "mixed"));
      d.link_namespace = item.value("link_namespace", "file-stem");
      d.format = parse_dataset_format(item.value("format", "manifest"));
      d.id_map_path = resolve(item.value("id_map", ""));
      if (!fs::exists(d.manifest_path)) {
        throw ConfigError(fmt::format("dataset '{}': manifest '{}' does not exist", d.dataset_id,
                                      d.manifest_path));
      }
      reg.register_dataset(d);
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("registry entry invalid: {}", e.what()));
    }
  }
  return reg;
}

LinkResolver::LinkResolver(const DatasetRegistry& registry) {
  for (const auto& d : registry.datasets()) {
    namespaces_[d.dataset_id] = d.link_namespace;
    if (d.id_map_path.empty()) continue;
    std::ifstream in(d.id_map_path);
    if (!in) throw ConfigError(fmt::format("cannot open id map '{}'", d.id_map_path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (text::trim(line).empty()) continue;
      try {
        const auto j = json::parse(line);
        add_mapping(j.value("dataset", d.dataset_id), j.at("image_id").get<std::string>(),
                    j.at("canonical_id").get<std::string>());
      } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}:{}: {}", d.id_map_path, lineno, e.what()));
      }
    }
  }
}

void LinkResolver::add_mapping(const std::string& dataset_id, const std::string& image_id,
                               const std::string& canonical_id) {
  id_map_[dataset_id + '\x1f' + image_id] = canonical_id;
}

LinkKey LinkResolver::key_for(const ImageRef& image) const {
  std::string ns = "file-stem";
  if (auto it = namespaces_.find(image.dataset_id); it != namespaces_.end()) ns = it->second;
  if (auto it = id_map_.find(image.dataset_id + '\x1f' + image.image_id); it != id_map_.end()) {
    return {ns == "file-stem" ? std::string("mapped") : ns, text::to_lower(it->second)};
  }
  return link_key(image, ns);
}

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError(fmt::format("cannot open '{}'", path));
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ManifestError(fmt::format("{}: {}", path, e.what()));
  }
}

template <typename Fn>
void for_each_line(const std::string& path, Fn fn) {
  std::ifstream in(path);
  if (!in) throw ManifestError(fmt::format("cannot open '{}'", path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    fn(line, lineno);
  }
}

ImageRef coco_image(const json& img, const std::string& dataset_id) {
  ImageRef ref;
  ref.dataset_id = dataset_id;
  const auto& id = img.at("id");
  ref.image_id = id.is_string() ? id.get<std::string>() : std::to_string(id.get<long long>());
  ref.uri = img.value("coco_url", img.value("file_name", ""));
  if (ref.uri.empty()) ref.uri = img.at("file_name").get<std::string>();
  ref.width = img.at("width").get<int>();
  ref.height = img.at("height").get<int>();
  return ref;
}

std::string json_id(const json& v) {
  return v.is_string() ? v.get<std::string>() : std::to_string(v.get<long long>());
}

std::vector<MetadataBundle> load_coco(const DatasetDescriptor& d, bool instances) {
  const auto j = read_json_file(d.manifest_path);
  std::map<std::string, MetadataBundle> by_id;
  for (const auto& img : j.at("images")) {
    MetadataBundle b;
    b.image = coco_image(img, d.dataset_id);
    by_id.emplace(b.image.image_id, std::move(b));
  }
  std::map<std::string, std::string> categories;
  if (instances) {
    for (const auto& c : j.value("categories", json::array())) {
      categories[json_id(c.at("id"))] = c.at("name").get<std::string>();
    }
  }
  for (const auto& ann : j.at("annotations")) {
    auto it = by_id.find(json_id(ann.at("image_id")));
    if (it == by_id.end()) continue;
    if (!instances) {
      it->second.captions.push_back({ann.at("caption").get<std::string>(), d.dataset_id});
      continue;
    }
    BoxAnnotation box;
    const auto cat = json_id(ann.at("category_id"));
    auto cit = categories.find(cat);
    box.label = cit != categories.end() ? cit->second : cat;
    const auto& bb = ann.at("bbox");
    box.bbox = Box{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                   bb[3].get<double>()};
    for (const auto& a : ann.value("attributes", json::array())) {
      box.attributes.push_back(a.get<std::string>());
    }
    box.source = d.dataset_id;
    it->second.boxes.push_back(std::move(box));
  }
  std::vector<MetadataBundle> out;
  out.reserve(by_id.size());
  for (auto& [id, b] : by_id) out.push_back(std::move(b));
  return out;
}

}  // namespace

LoadResult load_dataset(const DatasetDescriptor& d) {
  LoadResult result;
  std::vector<MetadataBundle> raw;
  try {
    switch (d.format) {
      case DatasetFormat::manifest:
        for_each_line(d.manifest_path, [&](const std::string& line, std::size_t lineno) {
          try {
            raw.push_back(parse_manifest_line(line));
          } catch (const ManifestError& e) {
            result.issues.push_back(
                {d.dataset_id, "", "line " + std::to_string(lineno), e.what()});
          }
        });
        break;
      case DatasetFormat::coco_captions:
        raw = load_coco(d, false);
        break;
      case DatasetFormat::coco_instances:
        raw = load_coco(d, true);
        break;
      case DatasetFormat::qa_jsonl:
        for_each_line(d.manifest_path, [&](const std::string& line, std::size_t lineno) {
          try {
            const auto j = json::parse(line);
            MetadataBundle b;
            b.image.dataset_id = d.dataset_id;
            b.image.image_id = json_id(j.at("image_id"));
            b.image.uri = j.value("uri", b.image.image_id);
            b.image.width = j.at("width").get<int>();
            b.image.height = j.at("height").get<int>();
            b.qas.push_back({j.at("question").get<std::string>(),
                             j.at("answer").get<std::string>(), d.dataset_id});
            raw.push_back(std::move(b));
          } catch (const json::exception& e) {
            result.issues.push_back(
                {d.dataset_id, "", "line " + std::to_string(lineno), e.what()});
          }
        });
        break;
    }
  } catch (const json::exception& e) {
    throw ManifestError(fmt::format("dataset '{}': {}", d.dataset_id, e.what()));
  }
  result.records.reserve(raw.size());
  for (auto& b : raw) {
    if (b.image.width <= 0 || b.image.height <= 0) {
      result.issues.push_back({b.image.dataset_id, b.image.image_id, "width/height",
                               "non-positive image size, record dropped"});
      continue;
    }
    auto normalized = normalize_bundle(std::move(b), result.issues);
    if (normalized.admissible()) {
      result.records.push_back(std::move(normalized));
    } else {
      result.issues.push_back({normalized.image.dataset_id, normalized.image.image_id,
                               "annotations", "record has no usable annotations, dropped"});
    }
  }
  return result;
}

LoadResult load_all(const DatasetRegistry& registry, bool parallel) {
  const auto& ds = registry.datasets();
  std::vector<LoadResult> parts(ds.size());
  std::vector<std::string> errors(ds.size());
  const int n = static_cast<int>(ds.size());
#pragma omp parallel for schedule(dynamic) if (parallel && n > 1)
  for (int i = 0; i < n; ++i) {
    try {
      parts[i] = load_dataset(ds[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  LoadResult all;
  for (int i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw ManifestError(errors[i]);
    std::move(parts[i].records.begin(), parts[i].records.end(), std::back_inserter(all.records));
    std::move(parts[i].issues.begin(), parts[i].issues.end(), std::back_inserter(all.issues));
  }
  return all;
}

namespace {

std::atomic<std::uint64_t> g_spill_counter{0};

json entry_to_json(const LinkKey& key, std::uint64_t ordinal, const MetadataBundle& b) {
  return json{{"ns", key.ns}, {"id", key.canonical_id}, {"o", ordinal}, {"b", to_manifest_json(b)}};
}

}  // namespace

ImageGrouper::ImageGrouper(GroupOptions options) : options_(std::move(options)) {
  if (options_.max_resident == 0) options_.max_resident = 1;
}

ImageGrouper::~ImageGrouper() {
  std::error_code ec;
  for (const auto& r : runs_) fs::remove(r, ec);
  if (!owned_dir_.empty()) fs::remove_all(owned_dir_, ec);
}

void ImageGrouper::add(const LinkKey& key, MetadataBundle bundle) {
  pending_.push_back({key, next_ordinal_++, std::move(bundle)});
  if (pending_.size() >= options_.max_resident) spill();
}

void ImageGrouper::spill() {
  if (pending_.empty()) return;
  std::sort(pending_.begin(), pending_.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.key, a.ordinal) < std::tie(b.key, b.ordinal);
  });
  fs::path dir = options_.spill_dir;
  if (dir.empty()) {
    if (owned_dir_.empty()) {
      owned_dir_ = fs::temp_directory_path() /
                   fmt::format("vig-group-{}-{}", ::getpid(), g_spill_counter.fetch_add(1));
      fs::create_directories(owned_dir_);
    }
    dir = owned_dir_;
  }
  const auto path = dir / fmt::format("run-{:05}.jsonl", runs_.size());
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write spill run '{}'", path.string()));
  for (const auto& e : pending_) out << entry_to_json(e.key, e.ordinal, e.bundle).dump() << '\n';
  if (!out) throw IoError(fmt::format("failed writing spill run '{}'", path.string()));
  runs_.push_back(path);
  pending_.clear();
}

void ImageGrouper::finish(const Sink& sink) {
  auto emit_group = [&](std::vector<Entry>& group) {
    std::sort(group.begin(), group.end(),
              [](const Entry& a, const Entry& b) { return a.ordinal < b.ordinal; });
    const auto key_str = group.front().key.str();
    MetadataBundle acc = std::move(group.front().bundle);
    for (std::size_t i = 1; i < group.size(); ++i) {
      acc = merge_bundles(acc, group[i].bundle, key_str, key_str);
    }
    sink(group.front().key, std::move(acc));
    group.clear();
  };

  if (runs_.empty()) {
    std::sort(pending_.begin(), pending_.end(), [](const Entry& a, const Entry& b) {
      return std::tie(a.key, a.ordinal) < std::tie(b.key, b.ordinal);
    });
    std::vector<Entry> group;
    for (auto& e : pending_) {
      if (!group.empty() && group.front().key != e.key) emit_group(group);
      group.push_back(std::move(e));
    }
    if (!group.empty()) emit_group(group);
    pending_.clear();
    return;
  }

  spill();
  struct Cursor {
    std::ifstream in;
    Entry head;
    bool valid = false;
  };
  std::vector<Cursor> cursors(runs_.size());
  auto advance = [](Cursor& c) {
    std::string line;
    if (!std::getline(c.in, line)) {
      c.valid = false;
      return;
    }
    const auto j = json::parse(line);
    c.head = Entry{{j.at("ns").get<std::string>(), j.at("id").get<std::string>()},
                   j.at("o").get<std::uint64_t>(), from_manifest_json(j.at("b"))};
    c.valid = true;
  };
  auto later = [&](std::size_t a, std::size_t b) {
    return std::tie(cursors[b].head.key, cursors[b].head.ordinal) <
           std::tie(cursors[a].head.key, cursors[a].head.ordinal);
  };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(later)> heap(later);
  for (std::size_t i = 0; i < runs_.size(); ++i) {
    cursors[i].in.open(runs_[i]);
    advance(cursors[i]);
    if (cursors[i].valid) heap.push(i);
  }
  std::vector<Entry> group;
  while (!heap.empty()) {
    const auto i = heap.top();
    heap.pop();
    if (!group.empty() && group.front().key != cursors[i].head.key) emit_group(group);
    group.push_back(std::move(cursors[i].head));
    advance(cursors[i]);
    if (cursors[i].valid) heap.push(i);
  }
  if (!group.empty()) emit_group(group);
}

std::vector<std::pair<LinkKey, MetadataBundle>> group_by_image(
    const std::vector<MetadataBundle>& records, const LinkResolver& resolver,
    GroupOptions options) {
  ImageGrouper grouper(std::move(options));
  for (const auto& r : records) grouper.add(resolver.key_for(r.image), r);
  std::vector<std::pair<LinkKey, MetadataBundle>> out;
  grouper.finish([&](const LinkKey& k, MetadataBundle b) { out.emplace_back(k, std::move(b)); });
  return out;
}

std::string to_grouped_line(const LinkKey& key, const MetadataBundle& bundle) {
  auto j = to_manifest_json(bundle);
  j["link_key"] = key.str();
  return j.dump();
}

std::pair<LinkKey, MetadataBundle> parse_grouped_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ManifestError(fmt::format("invalid JSON: {}", e.what()));
  }
  auto bundle = from_manifest_json(j);
  LinkKey key;
  if (auto it = j.find("link_key"); it != j.end() && it->is_string()) {
    const auto s = it->get<std::string>();
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ManifestError("link_key must be 'namespace:id'");
    key = {s.substr(0, colon), s.substr(colon + 1)};
  } else {
    key = link_key(bundle.image, "file-stem");
  }
  return {std::move(key), std::move(bundle)};
}

}  // namespace vig
