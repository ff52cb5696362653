#include "vig/scene_tree.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include <fmt/format.h>

#include "vig/error.hpp"
#include "vig/text.hpp"

namespace vig {

void SceneTreeParams::validate() const {
  if (!(mask_threshold > 0 && mask_threshold <= 1)) {
    throw ConfigError("scene.t_m must lie in (0, 1]");
  }
  if (!(containment_threshold > 0 && containment_threshold <= 1)) {
    throw ConfigError("scene.t_c must lie in (0, 1]");
  }
  if (!(depth_tolerance >= 0 && depth_tolerance <= 1)) {
    throw ConfigError("scene.depth_tolerance must lie in [0, 1]");
  }
  if (!(spatial_threshold >= 0)) throw ConfigError("scene.t_s must be non-negative");
  if (count_exact_max < 1 || count_exact_max >= count_several_max) {
    throw ConfigError("scene counting cutoffs need 1 <= count_exact_max < count_several_max");
  }
}

std::vector<SceneRegion> regions_from_boxes(std::span<const BoxAnnotation> boxes,
                                            const ImageRef& image) {
  std::vector<SceneRegion> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) {
    if (b.bbox.w <= 0 || b.bbox.h <= 0) continue;
    SceneRegion r;
    r.label = text::normalize_label(b.label);
    if (r.label.empty()) r.label = "object";
    r.bbox = b.bbox;
    if (b.mask_rle) {
      try {
        auto m = Mask::from_rle(*b.mask_rle);
        if (m.width() == image.width && m.height() == image.height && !m.empty()) {
          r.mask = std::move(m);
        }
      } catch (const MaskError&) {
        // Degraded mode: bbox stands in for the mask.
      }
    }
    if (b.depth_mean && *b.depth_mean >= 0 && *b.depth_mean <= 1) r.depth = b.depth_mean;
    for (const auto& a : b.attributes) {
      auto norm = text::collapse_whitespace(text::to_lower(a));
      if (!norm.empty()) r.attributes.push_back(std::move(norm));
    }
    std::sort(r.attributes.begin(), r.attributes.end());
    r.attributes.erase(std::unique(r.attributes.begin(), r.attributes.end()),
                       r.attributes.end());
    r.area = r.mask ? static_cast<double>(r.mask->area()) : r.bbox.area();
    out.push_back(std::move(r));
  }
  return out;
}

OverlapStats overlap_stats(const SceneRegion& a, const SceneRegion& b) {
  double inter = 0;
  double area_a = 0;
  double area_b = 0;
  if (a.mask && b.mask) {
    inter = static_cast<double>(intersection_area(*a.mask, *b.mask));
    area_a = static_cast<double>(a.mask->area());
    area_b = static_cast<double>(b.mask->area());
  } else {
    inter = box_intersection(a.bbox, b.bbox).area();
    area_a = a.bbox.area();
    area_b = b.bbox.area();
  }
  OverlapStats s;
  const double uni = area_a + area_b - inter;
  s.iou = uni > 0 ? inter / uni : 0.0;
  s.containment_of_a_in_b = area_a > 0 ? inter / area_a : 0.0;
  const double diag = std::min(std::hypot(a.bbox.w, a.bbox.h), std::hypot(b.bbox.w, b.bbox.h));
  const double dist = std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
  s.center_dist_norm = diag > 0 ? dist / diag : (dist > 0 ? INFINITY : 0.0);
  return s;
}

OverlapMatrix pairwise_overlaps(std::span<const SceneRegion> regions) {
  OverlapMatrix m;
  m.n = regions.size();
  m.cells.resize(m.n * m.n);
  const auto n = static_cast<std::int64_t>(m.n);
#pragma omp parallel for schedule(dynamic, 4) if (n >= 24)
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      m.cells[i * n + j] = overlap_stats(regions[i], regions[j]);
    }
  }
  return m;
}

OverlapMatrix pairwise_overlaps_serial(std::span<const SceneRegion> regions) {
  OverlapMatrix m;
  m.n = regions.size();
  m.cells.resize(m.n * m.n);
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < m.n; ++j) {
      m.cells[i * m.n + j] = overlap_stats(regions[i], regions[j]);
    }
  }
  return m;
}

namespace {

auto canonical_key(const SceneRegion& r) {
  return std::make_tuple(std::cref(r.label), r.bbox, r.depth.has_value(), r.depth.value_or(0.0),
                         r.area, std::cref(r.attributes), r.members);
}

bool canonical_less(const SceneRegion& a, const SceneRegion& b) {
  const auto ka = canonical_key(a);
  const auto kb = canonical_key(b);
  if (ka != kb) return ka < kb;
  const bool ma = a.mask.has_value();
  const bool mb = b.mask.has_value();
  if (ma != mb) return !ma;
  if (ma && !(*a.mask == *b.mask)) return a.mask->to_rle() < b.mask->to_rle();
  return false;
}

// Nearest first (absent depth last), then largest, then label, then canonical.
bool sibling_less(const SceneNode& a, const SceneNode& b) {
  const auto& ra = a.region;
  const auto& rb = b.region;
  const double da = ra.depth.value_or(INFINITY);
  const double db = rb.depth.value_or(INFINITY);
  if (da != db) return da < db;
  if (ra.area != rb.area) return ra.area > rb.area;
  if (ra.label != rb.label) return ra.label < rb.label;
  if (a.is_group != b.is_group) return a.is_group;
  return canonical_less(ra, rb);
}

void sort_siblings(std::vector<SceneNode>& nodes) {
  std::stable_sort(nodes.begin(), nodes.end(), sibling_less);
}

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

SceneRegion fuse(const std::vector<const SceneRegion*>& parts) {
  SceneRegion out = *parts.front();
  bool all_masked = out.mask.has_value();
  double depth_weighted = 0;
  double depth_weight = 0;
  int members = 0;
  for (const auto* r : parts) {
    members += r->members;
    if (r->depth) {
      depth_weighted += *r->depth * r->members;
      depth_weight += r->members;
    }
    all_masked = all_masked && r->mask.has_value();
  }
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto* r = parts[i];
    out.bbox = box_union(out.bbox, r->bbox);
    out.attributes.insert(out.attributes.end(), r->attributes.begin(), r->attributes.end());
    if (all_masked) out.mask = mask_union(*out.mask, *r->mask);
  }
  if (!all_masked) out.mask.reset();
  std::sort(out.attributes.begin(), out.attributes.end());
  out.attributes.erase(std::unique(out.attributes.begin(), out.attributes.end()),
                       out.attributes.end());
  out.members = members;
  out.depth = depth_weight > 0 ? std::optional<double>(depth_weighted / depth_weight)
                               : std::nullopt;
  out.area = out.mask ? static_cast<double>(out.mask->area()) : out.bbox.area();
  return out;
}

long round_px(double v) { return std::lround(v); }

}  // namespace

void sort_canonical(std::vector<SceneRegion>& regions) {
  std::stable_sort(regions.begin(), regions.end(), canonical_less);
}

bool is_duplicate_pair(const SceneRegion& a, const SceneRegion& b, const OverlapStats& ab,
                       const SceneTreeParams& p) {
  if (a.label != b.label) return false;
  if (ab.iou < p.mask_threshold) return false;
  if (ab.center_dist_norm > p.spatial_threshold) return false;
  if (a.depth && b.depth && std::abs(*a.depth - *b.depth) > p.depth_tolerance) return false;
  return true;
}

std::vector<SceneRegion> merge_duplicates(std::vector<SceneRegion> regions,
                                          const SceneTreeParams& p) {
  sort_canonical(regions);
  const auto n = regions.size();
  if (n < 2) return regions;
  const auto stats = pairwise_overlaps(regions);
  DisjointSet ds(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (is_duplicate_pair(regions[i], regions[j], stats.at(i, j), p)) ds.unite(i, j);
    }
  }
  std::map<std::size_t, std::vector<const SceneRegion*>> components;
  for (std::size_t i = 0; i < n; ++i) components[ds.find(i)].push_back(&regions[i]);
  std::vector<SceneRegion> out;
  out.reserve(components.size());
  for (const auto& [root, parts] : components) out.push_back(fuse(parts));
  sort_canonical(out);
  return out;
}

std::vector<std::size_t> processing_order(std::span<const SceneRegion> regions) {
  std::vector<std::size_t> order(regions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return regions[a].area > regions[b].area;
  });
  return order;
}

std::vector<int> assign_parents(std::span<const SceneRegion> regions, const SceneTreeParams& p) {
  const auto order = processing_order(regions);
  const auto stats = pairwise_overlaps(regions);
  std::vector<int> parent(regions.size(), -1);
  std::vector<std::size_t> placed;
  placed.reserve(regions.size());
  for (const auto r : order) {
    for (auto it = placed.rbegin(); it != placed.rend(); ++it) {
      if (stats.at(r, *it).containment_of_a_in_b >= p.containment_threshold) {
        parent[r] = static_cast<int>(*it);
        break;
      }
    }
    placed.push_back(r);
  }
  return parent;
}

SceneTree build_tree(const std::vector<SceneRegion>& input, const SceneTreeParams& p) {
  std::vector<SceneRegion> regions = input;
  sort_canonical(regions);
  const auto parent = assign_parents(regions, p);
  std::vector<std::vector<std::size_t>> kids(regions.size());
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (parent[i] < 0) {
      roots.push_back(i);
    } else {
      kids[static_cast<std::size_t>(parent[i])].push_back(i);
    }
  }
  auto make = [&](auto&& self, std::size_t i) -> SceneNode {
    SceneNode node;
    node.region = regions[i];
    for (auto c : kids[i]) node.children.push_back(self(self, c));
    sort_siblings(node.children);
    return node;
  };
  SceneTree tree;
  for (auto r : roots) tree.roots.push_back(make(make, r));
  sort_siblings(tree.roots);
  return tree;
}

std::string count_phrase(int count, const SceneTreeParams& p) {
  if (count <= p.count_exact_max) return std::to_string(count);
  if (count <= p.count_several_max) return "several";
  return "many";
}

namespace {

SceneNode make_group(std::vector<SceneNode> members, const SceneTreeParams& p) {
  SceneNode g;
  g.is_group = true;
  g.count = static_cast<int>(members.size());
  g.count_phrase = count_phrase(g.count, p);
  double sum_cx = 0, sum_cy = 0, sum_w = 0, sum_h = 0, sum_area = 0;
  double depth_sum = 0;
  int depth_n = 0;
  int member_total = 0;
  std::vector<std::string> shared = members.front().region.attributes;
  for (const auto& m : members) {
    const auto& r = m.region;
    sum_cx += r.cx();
    sum_cy += r.cy();
    sum_w += r.bbox.w;
    sum_h += r.bbox.h;
    sum_area += r.area;
    if (r.depth) {
      depth_sum += *r.depth;
      ++depth_n;
    }
    member_total += r.members;
    std::vector<std::string> keep;
    std::set_intersection(shared.begin(), shared.end(), r.attributes.begin(), r.attributes.end(),
                          std::back_inserter(keep));
    shared = std::move(keep);
  }
  const double k = static_cast<double>(members.size());
  const double w = sum_w / k;
  const double h = sum_h / k;
  g.region.label = members.front().region.label;
  g.region.bbox = Box{sum_cx / k - w / 2, sum_cy / k - h / 2, w, h};
  g.region.area = sum_area / k;
  g.region.depth = depth_n > 0 ? std::optional<double>(depth_sum / depth_n) : std::nullopt;
  g.region.members = member_total;
  g.region.attributes = shared;
  g.shared_attributes = std::move(shared);
  sort_siblings(members);
  g.children = std::move(members);
  return g;
}

void group_level(std::vector<SceneNode>& siblings, const SceneTreeParams& p) {
  for (auto& s : siblings) group_level(s.children, p);
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < siblings.size(); ++i) {
    if (!siblings[i].is_group) by_label[siblings[i].region.label].push_back(i);
  }
  std::vector<SceneNode> next;
  std::vector<bool> taken(siblings.size(), false);
  for (auto& [label, idx] : by_label) {
    if (idx.size() < 2) continue;
    std::vector<SceneNode> members;
    for (auto i : idx) {
      members.push_back(std::move(siblings[i]));
      taken[i] = true;
    }
    next.push_back(make_group(std::move(members), p));
  }
  for (std::size_t i = 0; i < siblings.size(); ++i) {
    if (!taken[i]) next.push_back(std::move(siblings[i]));
  }
  sort_siblings(next);
  siblings = std::move(next);
}

bool distinctive(const SceneNode& member, const SceneNode& group) {
  if (!member.children.empty()) return true;
  return member.region.attributes.size() > group.shared_attributes.size();
}

std::string attribute_suffix(const std::vector<std::string>& attrs) {
  if (attrs.empty()) return "";
  return fmt::format(" ({})", fmt::join(attrs, ", "));
}

std::string depth_suffix(const std::optional<double>& depth) {
  return depth ? fmt::format(", depth {:.2f}", *depth) : std::string();
}

void render(const SceneNode& node, const ImageRef& image, int level, std::string& out) {
  const std::string indent(static_cast<std::size_t>(level) * 2, ' ');
  const auto& r = node.region;
  const auto pos = position_phrase(r.cx(), r.cy(), image);
  if (node.is_group) {
    out += fmt::format("{}{} {}{} around ({}, {}) [{}], avg size {}x{}{}\n", indent,
                       node.count_phrase, text::pluralize(r.label),
                       attribute_suffix(node.shared_attributes), round_px(r.cx()),
                       round_px(r.cy()), pos, round_px(r.bbox.w), round_px(r.bbox.h),
                       depth_suffix(r.depth));
    for (const auto& c : node.children) {
      if (distinctive(c, node)) render(c, image, level + 1, out);
    }
    return;
  }
  out += fmt::format("{}{}{} at ({}, {}) [{}], size {}x{}{}\n", indent, r.label,
                     attribute_suffix(r.attributes), round_px(r.cx()), round_px(r.cy()), pos,
                     round_px(r.bbox.w), round_px(r.bbox.h), depth_suffix(r.depth));
  for (const auto& c : node.children) render(c, image, level + 1, out);
}

}  // namespace

SceneTree group_and_count(SceneTree tree, const SceneTreeParams& p) {
  group_level(tree.roots, p);
  return tree;
}

std::string position_phrase(double cx, double cy, const ImageRef& image) {
  const double w = image.width > 0 ? image.width : 1;
  const double h = image.height > 0 ? image.height : 1;
  const char* col = cx < w / 3 ? "left" : (cx < 2 * w / 3 ? "" : "right");
  const char* row = cy < h / 3 ? "top" : (cy < 2 * h / 3 ? "" : "bottom");
  std::string phrase = row;
  if (*col) phrase += phrase.empty() ? col : std::string(" ") + col;
  return phrase.empty() ? "center" : phrase;
}

std::string serialize_tree(const SceneTree& tree, const ImageRef& image) {
  std::string out;
  for (const auto& root : tree.roots) render(root, image, 0, out);
  return out;
}

SceneTree build_scene(std::span<const BoxAnnotation> boxes, const ImageRef& image,
                      const SceneTreeParams& p) {
  auto regions = merge_duplicates(regions_from_boxes(boxes, image), p);
  return group_and_count(build_tree(regions, p), p);
}

namespace {

std::optional<std::string> check_edges(const std::vector<SceneNode>& nodes,
                                       const SceneRegion* parent, const SceneTreeParams& p) {
  for (const auto& n : nodes) {
    if (n.is_group) {
      if (auto err = check_edges(n.children, parent, p)) return err;
      continue;
    }
    if (parent) {
      const auto s = overlap_stats(n.region, *parent);
      if (s.containment_of_a_in_b < p.containment_threshold) {
        return fmt::format("'{}' under '{}' with containment {:.3f} < {:.3f}", n.region.label,
                           parent->label, s.containment_of_a_in_b, p.containment_threshold);
      }
    }
    if (auto err = check_edges(n.children, &n.region, p)) return err;
  }
  return std::nullopt;
}

int depth_of(const std::vector<SceneNode>& nodes) {
  int best = 0;
  for (const auto& n : nodes) {
    const int below = depth_of(n.children);
    best = std::max(best, n.is_group ? below : below + 1);
  }
  return best;
}

int members_of(const std::vector<SceneNode>& nodes) {
  int total = 0;
  for (const auto& n : nodes) {
    total += n.is_group ? 0 : n.region.members;
    total += members_of(n.children);
  }
  return total;
}

}  // namespace

std::optional<std::string> validate_tree(const SceneTree& tree, const SceneTreeParams& p) {
  return check_edges(tree.roots, nullptr, p);
}

int tree_depth(const SceneTree& tree) { return depth_of(tree.roots); }

int total_members(const SceneTree& tree) { return members_of(tree.roots); }

}  // namespace vig
