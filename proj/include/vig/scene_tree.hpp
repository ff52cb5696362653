#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vig/mask.hpp"
#include "vig/metadata.hpp"

namespace vig {

struct SceneTreeParams {
  double spatial_threshold = 0.25;      // t_s: center distance / smaller box diagonal
  double mask_threshold = 0.9;          // t_m: IoU needed to merge duplicates
  double containment_threshold = 0.8;   // t_c: |child ∩ parent| / |child|
  double depth_tolerance = 0.15;
  int count_exact_max = 4;
  int count_several_max = 9;

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

struct SceneRegion {
  std::string label;  // normalized
  Box bbox;
  std::optional<Mask> mask;
  std::optional<double> depth;
  std::vector<std::string> attributes;  // sorted, unique
  double area = 0;                      // mask area when masked, else bbox area
  int members = 1;

  double cx() const { return bbox.cx(); }
  double cy() const { return bbox.cy(); }
};

// Builds regions from (already clamped) box annotations. Masks whose grid
// does not match the image are ignored, leaving the bbox fallback.
std::vector<SceneRegion> regions_from_boxes(std::span<const BoxAnnotation> boxes,
                                            const ImageRef& image);

struct OverlapStats {
  double iou = 0;
  double containment_of_a_in_b = 0;
  double center_dist_norm = 0;
};

// Mask-based when both regions carry masks, bbox-based otherwise.
OverlapStats overlap_stats(const SceneRegion& a, const SceneRegion& b);

// Row-major n x n matrix of overlap_stats(regions[i], regions[j]).
struct OverlapMatrix {
  std::size_t n = 0;
  std::vector<OverlapStats> cells;
  const OverlapStats& at(std::size_t i, std::size_t j) const { return cells[i * n + j]; }
};

// OpenMP kernel and its serial reference; results are identical.
OverlapMatrix pairwise_overlaps(std::span<const SceneRegion> regions);
OverlapMatrix pairwise_overlaps_serial(std::span<const SceneRegion> regions);

// Canonical order used before any processing so that results never depend
// on input order: (label, bbox, depth, area, attributes, mask).
void sort_canonical(std::vector<SceneRegion>& regions);

// True when the pair qualifies for duplicate merging under p.
bool is_duplicate_pair(const SceneRegion& a, const SceneRegion& b, const OverlapStats& ab,
                       const SceneTreeParams& p);

// Union-find closure over the duplicate relation. Output is in canonical order.
std::vector<SceneRegion> merge_duplicates(std::vector<SceneRegion> regions,
                                          const SceneTreeParams& p);

struct SceneNode {
  SceneRegion region;
  bool is_group = false;
  int count = 1;                // objects gathered by a group node
  std::string count_phrase;     // "3", "several", "many" on group nodes
  std::vector<std::string> shared_attributes;  // group nodes only
  std::vector<SceneNode> children;
};

struct SceneTree {
  std::vector<SceneNode> roots;
  bool empty() const { return roots.empty(); }
};

// Order in which build_tree pops regions: area descending, then canonical.
std::vector<std::size_t> processing_order(std::span<const SceneRegion> regions);

// Parent index per region (or -1), attaching each region under the most
// recently placed container with containment >= t_c.
std::vector<int> assign_parents(std::span<const SceneRegion> regions, const SceneTreeParams& p);

SceneTree build_tree(const std::vector<SceneRegion>& regions, const SceneTreeParams& p);

// Gathers same-label siblings under group nodes and sorts every sibling list
// by depth (nearest first), area (largest first), then label.
SceneTree group_and_count(SceneTree tree, const SceneTreeParams& p);

std::string count_phrase(int count, const SceneTreeParams& p);

// Indented ASCII rendering, two spaces per level. Empty tree -> "".
std::string serialize_tree(const SceneTree& tree, const ImageRef& image);

// "top left", "center", ... from a point and the image frame.
std::string position_phrase(double cx, double cy, const ImageRef& image);

// Full path: regions -> merge -> build -> group.
SceneTree build_scene(std::span<const BoxAnnotation> boxes, const ImageRef& image,
                      const SceneTreeParams& p);

// Checks the containment invariant on every real parent-child edge (group
// nodes are transparent). Returns a description of the first violation.
std::optional<std::string> validate_tree(const SceneTree& tree, const SceneTreeParams& p);

int tree_depth(const SceneTree& tree);
int total_members(const SceneTree& tree);  // over non-group nodes

}  // namespace vig
