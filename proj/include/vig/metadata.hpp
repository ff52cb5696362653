#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vig/mask.hpp"

namespace vig {

struct ImageRef {
  std::string dataset_id;
  std::string image_id;
  std::string uri;
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct CaptionAnnotation {
  std::string text;
  std::string source;

  friend bool operator==(const CaptionAnnotation&, const CaptionAnnotation&) = default;
};

struct BoxAnnotation {
  std::string label;
  Box bbox;
  std::vector<std::string> attributes;
  std::optional<std::string> mask_rle;
  std::optional<double> depth_mean;
  std::string source;

  friend bool operator==(const BoxAnnotation&, const BoxAnnotation&) = default;
};

struct QAAnnotation {
  std::string question;
  std::string answer;
  std::string source;

  friend bool operator==(const QAAnnotation&, const QAAnnotation&) = default;
};

struct MetadataBundle {
  ImageRef image;
  std::vector<CaptionAnnotation> captions;
  std::vector<BoxAnnotation> boxes;
  std::vector<QAAnnotation> qas;

  std::size_t annotation_count() const { return captions.size() + boxes.size() + qas.size(); }
  bool admissible() const { return annotation_count() > 0; }

  friend bool operator==(const MetadataBundle&, const MetadataBundle&) = default;
};

// Union of two bundles describing the same picture. Exact duplicates
// collapse; each list is ordered by (source, position in a then b).
// Throws MismatchedImage when the canonical keys differ and
// DimensionConflict when sizes disagree by more than one pixel. The caller
// decides canonical identity, so the keys are passed in.
MetadataBundle merge_bundles(const MetadataBundle& a, const MetadataBundle& b,
                             std::string_view key_a, std::string_view key_b);

// Convenience overload for bundles whose ImageRefs are directly comparable
// (same uri file stem).
MetadataBundle merge_bundles(const MetadataBundle& a, const MetadataBundle& b);

// Intersects the bbox with the image frame. Throws DegenerateBox when
// nothing is left.
BoxAnnotation clamp_box(const BoxAnnotation& box, const ImageRef& image);

// Issues found while normalizing one record; never fatal.
struct ValidationIssue {
  std::string dataset_id;
  std::string image_id;
  std::string field;
  std::string message;
};

// Clamps boxes, drops empty captions/QAs and degenerate boxes, checks
// masks and depths. Anything dropped or repaired is reported in `issues`.
MetadataBundle normalize_bundle(MetadataBundle bundle, std::vector<ValidationIssue>& issues);

// Strict check of every invariant; returns the list of violations
// (empty when the record is clean). Used by `validate`.
std::vector<ValidationIssue> lint_bundle(const MetadataBundle& bundle);

// Fully sorted serialization used to compare bundles up to ordering.
std::string canonical_form(const MetadataBundle& bundle);

// Unified manifest record <-> bundle.
nlohmann::json to_manifest_json(const MetadataBundle& bundle);
MetadataBundle from_manifest_json(const nlohmann::json& record);
std::string to_manifest_line(const MetadataBundle& bundle);
MetadataBundle parse_manifest_line(std::string_view line);

}  // namespace vig

namespace vig {

// Lowercased file name of a path or URL without directory, query or extension.
std::string uri_file_stem(std::string_view uri);

}  // namespace vig
