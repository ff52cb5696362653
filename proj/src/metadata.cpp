#include "vig/metadata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include <fmt/format.h>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace vig {

using nlohmann::json;

std::string uri_file_stem(std::string_view uri) {
  auto cut = uri.find_first_of("?#");
  if (cut != std::string_view::npos) uri = uri.substr(0, cut);
  auto slash = uri.find_last_of("/\\");
  if (slash != std::string_view::npos) uri = uri.substr(slash + 1);
  auto dot = uri.rfind('.');
  if (dot != std::string_view::npos && dot > 0) uri = uri.substr(0, dot);
  return text::to_lower(uri);
}

namespace {

// Stable sort by source, then drop exact duplicates keeping the first.
template <typename T, typename SameFn>
std::vector<T> merge_lists(const std::vector<T>& a, const std::vector<T>& b, SameFn same) {
  std::vector<T> all;
  all.reserve(a.size() + b.size());
  all.insert(all.end(), a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  std::stable_sort(all.begin(), all.end(),
                   [](const T& x, const T& y) { return x.source < y.source; });
  std::vector<T> out;
  out.reserve(all.size());
  for (auto& item : all) {
    // Duplicates share a source, so they are adjacent-or-near within that source's run.
    bool dup = false;
    for (auto it = out.rbegin(); it != out.rend() && it->source == item.source; ++it) {
      if (same(*it, item)) {
        dup = true;
        break;
      }
    }
    if (!dup) out.push_back(std::move(item));
  }
  return out;
}

json box_to_json(const BoxAnnotation& b) {
  json j;
  j["label"] = b.label;
  j["bbox"] = {b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h};
  j["attributes"] = b.attributes;
  j["mask_rle"] = b.mask_rle ? json(*b.mask_rle) : json(nullptr);
  j["depth_mean"] = b.depth_mean ? json(*b.depth_mean) : json(nullptr);
  j["source"] = b.source;
  return j;
}

std::string require_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw ManifestError(fmt::format("field '{}' missing or not a string", key));
  }
  return it->get<std::string>();
}

std::string optional_string(const json& j, const char* key, std::string fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw ManifestError(fmt::format("field '{}' is not a string", key));
  return it->get<std::string>();
}

int require_int(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer()) {
    throw ManifestError(fmt::format("field '{}' missing or not an integer", key));
  }
  return it->get<int>();
}

const json& optional_array(const json& j, const char* key) {
  static const json empty = json::array();
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return empty;
  if (!it->is_array()) throw ManifestError(fmt::format("field '{}' is not an array", key));
  return *it;
}

}  // namespace

MetadataBundle merge_bundles(const MetadataBundle& a, const MetadataBundle& b,
                             std::string_view key_a, std::string_view key_b) {
  if (key_a != key_b) {
    throw MismatchedImage(fmt::format("cannot merge '{}' with '{}'", key_a, key_b));
  }
  if (std::abs(a.image.width - b.image.width) > 1 ||
      std::abs(a.image.height - b.image.height) > 1) {
    throw DimensionConflict(fmt::format("{}: {}x{} vs {}x{}", key_a, a.image.width,
                                        a.image.height, b.image.width, b.image.height));
  }
  MetadataBundle out;
  const auto& ia = a.image;
  const auto& ib = b.image;
  out.image = std::tie(ia.dataset_id, ia.image_id, ia.uri) <= std::tie(ib.dataset_id, ib.image_id, ib.uri)
                  ? ia
                  : ib;
  out.image.width = std::max(ia.width, ib.width);
  out.image.height = std::max(ia.height, ib.height);

  out.captions = merge_lists(a.captions, b.captions, [](const auto& x, const auto& y) {
    return x.text == y.text;
  });
  out.boxes = merge_lists(a.boxes, b.boxes, [](const auto& x, const auto& y) {
    return x.label == y.label && x.bbox == y.bbox;
  });
  out.qas = merge_lists(a.qas, b.qas, [](const auto& x, const auto& y) {
    return x.question == y.question && x.answer == y.answer;
  });
  return out;
}

MetadataBundle merge_bundles(const MetadataBundle& a, const MetadataBundle& b) {
  return merge_bundles(a, b, uri_file_stem(a.image.uri), uri_file_stem(b.image.uri));
}

BoxAnnotation clamp_box(const BoxAnnotation& box, const ImageRef& image) {
  const Box frame{0, 0, static_cast<double>(image.width), static_cast<double>(image.height)};
  const Box clipped = box_intersection(box.bbox, frame);
  if (clipped.w <= 0 || clipped.h <= 0 || box.bbox.w <= 0 || box.bbox.h <= 0) {
    throw DegenerateBox(fmt::format("box '{}' [{}, {}, {}, {}] has no area inside {}x{}",
                                    box.label, box.bbox.x, box.bbox.y, box.bbox.w, box.bbox.h,
                                    image.width, image.height));
  }
  BoxAnnotation out = box;
  out.bbox = clipped;
  return out;
}

MetadataBundle normalize_bundle(MetadataBundle bundle, std::vector<ValidationIssue>& issues) {
  const auto& img = bundle.image;
  auto report = [&](std::string field, std::string message) {
    issues.push_back({img.dataset_id, img.image_id, std::move(field), std::move(message)});
  };

  std::erase_if(bundle.captions, [&](CaptionAnnotation& c) {
    c.text = text::trim(c.text);
    if (c.text.empty()) {
      report("captions", "empty caption dropped");
      return true;
    }
    return false;
  });
  std::erase_if(bundle.qas, [&](QAAnnotation& q) {
    q.question = text::trim(q.question);
    q.answer = text::trim(q.answer);
    if (q.question.empty() || q.answer.empty()) {
      report("qas", "QA pair with empty side dropped");
      return true;
    }
    return false;
  });

  std::vector<BoxAnnotation> boxes;
  boxes.reserve(bundle.boxes.size());
  for (auto& b : bundle.boxes) {
    BoxAnnotation clamped;
    try {
      clamped = clamp_box(b, img);
    } catch (const DegenerateBox& e) {
      report("boxes", e.what());
      continue;
    }
    if (clamped.bbox != b.bbox) {
      report("boxes", fmt::format("box '{}' clamped to image frame", b.label));
    }
    if (clamped.depth_mean && !(*clamped.depth_mean >= 0.0 && *clamped.depth_mean <= 1.0)) {
      report("boxes", fmt::format("box '{}' depth {} outside [0,1], ignored", b.label,
                                  *clamped.depth_mean));
      clamped.depth_mean.reset();
    }
    if (clamped.mask_rle) {
      try {
        const auto mask = Mask::from_rle(*clamped.mask_rle);
        if (mask.width() != img.width || mask.height() != img.height) {
          throw MaskError(fmt::format("mask grid {}x{} differs from image {}x{}", mask.width(),
                                      mask.height(), img.width, img.height));
        }
        if (mask.empty()) throw MaskError("mask has no foreground");
      } catch (const MaskError& e) {
        report("boxes", fmt::format("box '{}' mask ignored: {}", b.label, e.what()));
        clamped.mask_rle.reset();
      }
    }
    boxes.push_back(std::move(clamped));
  }
  bundle.boxes = std::move(boxes);
  return bundle;
}

std::vector<ValidationIssue> lint_bundle(const MetadataBundle& bundle) {
  std::vector<ValidationIssue> issues;
  const auto& img = bundle.image;
  auto report = [&](std::string field, std::string message) {
    issues.push_back({img.dataset_id, img.image_id, std::move(field), std::move(message)});
  };
  if (img.width <= 0 || img.height <= 0) {
    report("width/height", fmt::format("non-positive size {}x{}", img.width, img.height));
  }
  if (img.dataset_id.empty()) report("dataset", "empty dataset id");
  if (img.image_id.empty()) report("image_id", "empty image id");
  if (!bundle.admissible()) report("annotations", "record has no annotations");
  for (const auto& c : bundle.captions) {
    if (text::trim(c.text).empty()) report("captions", "empty caption");
    if (c.source.empty()) report("captions", "caption without source");
  }
  for (const auto& q : bundle.qas) {
    if (text::trim(q.question).empty() || text::trim(q.answer).empty()) {
      report("qas", "QA pair with empty side");
    }
    if (q.source.empty()) report("qas", "QA without source");
  }
  for (const auto& b : bundle.boxes) {
    if (b.source.empty()) report("boxes", "box without source");
    if (b.bbox.w <= 0 || b.bbox.h <= 0) {
      report("boxes", fmt::format("box '{}' has non-positive size", b.label));
      continue;
    }
    if (img.width > 0 && img.height > 0) {
      try {
        if (clamp_box(b, img).bbox != b.bbox) {
          report("boxes", fmt::format("box '{}' extends outside the image", b.label));
        }
      } catch (const DegenerateBox& e) {
        report("boxes", e.what());
      }
    }
    if (b.depth_mean && !(*b.depth_mean >= 0.0 && *b.depth_mean <= 1.0)) {
      report("boxes", fmt::format("box '{}' depth outside [0,1]", b.label));
    }
    if (b.mask_rle) {
      try {
        const auto mask = Mask::from_rle(*b.mask_rle);
        if (mask.width() != img.width || mask.height() != img.height) {
          report("boxes", fmt::format("box '{}' mask grid differs from image", b.label));
        } else if (mask.empty()) {
          report("boxes", fmt::format("box '{}' mask is empty", b.label));
        }
      } catch (const MaskError& e) {
        report("boxes", fmt::format("box '{}': {}", b.label, e.what()));
      }
    }
  }
  return issues;
}

std::string canonical_form(const MetadataBundle& bundle) {
  auto j = to_manifest_json(bundle);
  for (const char* key : {"captions", "boxes", "qas"}) {
    auto& arr = j[key];
    std::vector<std::string> items;
    for (const auto& item : arr) items.push_back(item.dump());
    std::sort(items.begin(), items.end());
    arr = json::array();
    for (const auto& s : items) arr.push_back(json::parse(s));
  }
  return j.dump();
}

json to_manifest_json(const MetadataBundle& bundle) {
  json j;
  j["dataset"] = bundle.image.dataset_id;
  j["image_id"] = bundle.image.image_id;
  j["uri"] = bundle.image.uri;
  j["width"] = bundle.image.width;
  j["height"] = bundle.image.height;
  j["captions"] = json::array();
  for (const auto& c : bundle.captions) {
    j["captions"].push_back({{"text", c.text}, {"source", c.source}});
  }
  j["boxes"] = json::array();
  for (const auto& b : bundle.boxes) j["boxes"].push_back(box_to_json(b));
  j["qas"] = json::array();
  for (const auto& q : bundle.qas) {
    j["qas"].push_back({{"question", q.question}, {"answer", q.answer}, {"source", q.source}});
  }
  return j;
}

MetadataBundle from_manifest_json(const json& record) {
  if (!record.is_object()) throw ManifestError("manifest record is not an object");
  MetadataBundle b;
  b.image.dataset_id = require_string(record, "dataset");
  b.image.image_id = require_string(record, "image_id");
  b.image.uri = optional_string(record, "uri", "");
  b.image.width = require_int(record, "width");
  b.image.height = require_int(record, "height");
  const std::string& ds = b.image.dataset_id;
  for (const auto& c : optional_array(record, "captions")) {
    b.captions.push_back({require_string(c, "text"), optional_string(c, "source", ds)});
  }
  for (const auto& jb : optional_array(record, "boxes")) {
    BoxAnnotation box;
    box.label = require_string(jb, "label");
    const auto& bb = jb.at("bbox");
    if (!bb.is_array() || bb.size() != 4) {
      throw ManifestError("bbox must be an array of four numbers");
    }
    for (const auto& v : bb) {
      if (!v.is_number()) throw ManifestError("bbox must be an array of four numbers");
    }
    box.bbox = Box{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                   bb[3].get<double>()};
    for (const auto& a : optional_array(jb, "attributes")) {
      if (!a.is_string()) throw ManifestError("attributes must be strings");
      box.attributes.push_back(a.get<std::string>());
    }
    if (auto it = jb.find("mask_rle"); it != jb.end() && !it->is_null()) {
      if (!it->is_string()) throw ManifestError("mask_rle must be a string or null");
      box.mask_rle = it->get<std::string>();
    }
    if (auto it = jb.find("depth_mean"); it != jb.end() && !it->is_null()) {
      if (!it->is_number()) throw ManifestError("depth_mean must be a number or null");
      box.depth_mean = it->get<double>();
    }
    box.source = optional_string(jb, "source", ds);
    b.boxes.push_back(std::move(box));
  }
  for (const auto& q : optional_array(record, "qas")) {
    b.qas.push_back({require_string(q, "question"), require_string(q, "answer"),
                     optional_string(q, "source", ds)});
  }
  return b;
}

std::string to_manifest_line(const MetadataBundle& bundle) {
  return to_manifest_json(bundle).dump();
}

MetadataBundle parse_manifest_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ManifestError(fmt::format("invalid JSON: {}", e.what()));
  }
  try {
    return from_manifest_json(j);
  } catch (const json::exception& e) {
    throw ManifestError(fmt::format("invalid manifest record: {}", e.what()));
  }
}

}  // namespace vig
