#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "vig/error.hpp"
#include "vig/scene_tree.hpp"

using namespace vig;

namespace {

BoxAnnotation ann(const std::string& label, Box b, std::optional<double> depth = std::nullopt) {
  BoxAnnotation a;
  a.label = label;
  a.bbox = b;
  a.depth_mean = depth;
  a.source = "t";
  return a;
}

SceneRegion region(const std::string& label, Box b) {
  SceneRegion r;
  r.label = label;
  r.bbox = b;
  r.area = b.area();
  return r;
}

const ImageRef kImage{"t", "1", "t.jpg", 200, 200};

}  // namespace

TEST_CASE("params validation") {
  SceneTreeParams p;
  CHECK_NOTHROW(p.validate());
  p.containment_threshold = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.count_exact_max = 9;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("overlap_stats examples") {
  const auto a = region("a", {10, 10, 20, 20});
  const auto s = overlap_stats(a, a);
  CHECK(s.iou == doctest::Approx(1.0));
  CHECK(s.containment_of_a_in_b == doctest::Approx(1.0));
  CHECK(s.center_dist_norm == doctest::Approx(0.0));
  const auto big = region("b", {0, 0, 100, 100});
  const auto t = overlap_stats(a, big);
  CHECK(t.containment_of_a_in_b == doctest::Approx(1.0));
  CHECK(t.iou == doctest::Approx(0.04));
  CHECK(overlap_stats(region("a", {0, 0, 5, 5}), region("b", {50, 50, 5, 5})).iou == 0.0);
}

TEST_CASE("masked overlap stats equal pixel enumeration") {
  std::mt19937_64 rng(21);
  const ImageRef grid{"t", "1", "t.jpg", 32, 32};
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::uint8_t> pa(32 * 32), pb(32 * 32);
    for (auto& p : pa) p = rng() % 2;
    for (auto& p : pb) p = rng() % 3 == 0;
    pa[0] = pb[0] = 1;
    auto a = region("a", {0, 0, 32, 32});
    auto b = region("b", {0, 0, 32, 32});
    a.mask = Mask::from_bitmap(32, 32, pa);
    b.mask = Mask::from_bitmap(32, 32, pb);
    a.bbox = a.mask->bounds();
    b.bbox = b.mask->bounds();
    a.area = static_cast<double>(a.mask->area());
    b.area = static_cast<double>(b.mask->area());
    const auto got = overlap_stats(a, b);
    const auto want = testing::oracle_stats(a, b);
    CHECK(got.iou == doctest::Approx(want.iou).epsilon(1e-12));
    CHECK(got.containment_of_a_in_b == doctest::Approx(want.containment_of_a_in_b).epsilon(1e-12));
    CHECK(got.center_dist_norm == doctest::Approx(want.center_dist_norm).epsilon(1e-12));
  }
  (void)grid;
}

TEST_CASE("pairwise overlap kernel matches its serial reference") {
  std::mt19937_64 rng(4);
  const auto image = testing::small_image();
  for (int trial = 0; trial < 20; ++trial) {
    const auto regions = regions_from_boxes(testing::random_scene(rng, image, {20, 0.5, 0.5}), image);
    const auto par = pairwise_overlaps(regions);
    const auto ser = pairwise_overlaps_serial(regions);
    REQUIRE(par.n == ser.n);
    for (std::size_t i = 0; i < par.cells.size(); ++i) {
      CHECK(par.cells[i].iou == ser.cells[i].iou);
      CHECK(par.cells[i].containment_of_a_in_b == ser.cells[i].containment_of_a_in_b);
      CHECK(par.cells[i].center_dist_norm == ser.cells[i].center_dist_norm);
    }
  }
}

TEST_CASE("merge_duplicates examples") {
  const SceneTreeParams p;
  // Two cats whose boxes overlap with IoU 0.95.
  const Box a{0, 0, 100, 100};
  const Box b{0, 0, 100, 95};
  SUBCASE("same depth merges") {
    const auto merged = merge_duplicates(regions_from_boxes(std::vector{ann("cat", a, 0.2), ann("cats", b, 0.2)}, kImage), p);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].members == 2);
    CHECK(merged[0].bbox == a);
  }
  SUBCASE("different depth stays apart") {
    const auto merged = merge_duplicates(regions_from_boxes(std::vector{ann("cat", a, 0.2), ann("cat", b, 0.9)}, kImage), p);
    CHECK(merged.size() == 2);
  }
  SUBCASE("different label stays apart") {
    const auto merged = merge_duplicates(regions_from_boxes(std::vector{ann("cat", a), ann("dog", b)}, kImage), p);
    CHECK(merged.size() == 2);
  }
  SUBCASE("merged depth is member weighted") {
    const auto merged = merge_duplicates(
        regions_from_boxes(std::vector{ann("cat", a, 0.2), ann("cat", b, 0.3), ann("cat", a, 0.25)}, kImage), p);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].members == 3);
    CHECK(*merged[0].depth == doctest::Approx(0.25));
  }
}

TEST_CASE("raising t_m never increases merging") {
  std::mt19937_64 rng(8);
  const auto image = testing::small_image();
  for (int trial = 0; trial < 50; ++trial) {
    const auto regions = regions_from_boxes(testing::random_scene(rng, image, {20, 0.3, 0.3}), image);
    SceneTreeParams lo, hi;
    lo.mask_threshold = 0.5;
    hi.mask_threshold = 0.9;
    CHECK(merge_duplicates(regions, lo).size() <= merge_duplicates(regions, hi).size());
  }
}

TEST_CASE("build_tree examples") {
  const SceneTreeParams p;
  SUBCASE("face inside person") {
    const auto tree = build_tree(regions_from_boxes(std::vector{ann("face", {30, 10, 40, 40}), ann("person", {0, 0, 100, 200})}, kImage), p);
    REQUIRE(tree.roots.size() == 1);
    CHECK(tree.roots[0].region.label == "person");
    REQUIRE(tree.roots[0].children.size() == 1);
    CHECK(tree.roots[0].children[0].region.label == "face");
  }
  SUBCASE("disjoint boxes are all roots") {
    const auto tree = build_tree(
        regions_from_boxes(std::vector{ann("a", {0, 0, 10, 10}), ann("b", {50, 50, 10, 10}), ann("c", {100, 0, 20, 20})}, kImage), p);
    CHECK(tree.roots.size() == 3);
  }
  SUBCASE("8-region nested fixture matches the smallest-container oracle") {
    const std::vector boxes{
        ann("table", {0, 100, 200, 100}), ann("plate", {20, 120, 60, 40}), ann("fork", {25, 125, 10, 30}),
        ann("person", {100, 0, 80, 190}),  ann("face", {120, 5, 40, 40}),  ann("eye", {130, 15, 8, 6}),
        ann("hat", {115, 0, 50, 12}),       ann("cup", {150, 150, 20, 30}),
    };
    const auto regions = regions_from_boxes(boxes, kImage);
    CHECK(assign_parents(regions, p) == testing::oracle_parents(regions, p));
    const auto tree = build_tree(regions, p);
    CHECK_FALSE(validate_tree(tree, p).has_value());
    CHECK(tree_depth(tree) == 3);
  }
}

TEST_CASE("raising t_c can deepen the tree under the smallest-container rule") {
  // C sits 85% inside a small root P1 and 95% inside P2, which nests under R.
  const std::vector boxes{
      ann("r", {0, 0, 200, 200}), ann("p2", {0, 0, 150, 150}), ann("p1", {100, 100, 100, 90}),
      ann("c", {110, 110, 34, 40}),
  };
  auto regions = regions_from_boxes(boxes, kImage);
  SceneTreeParams lo, hi;
  lo.containment_threshold = 0.8;
  hi.containment_threshold = 0.9;
  const auto d_lo = tree_depth(build_tree(regions, lo));
  const auto d_hi = tree_depth(build_tree(regions, hi));
  CHECK(assign_parents(regions, lo) == testing::oracle_parents(regions, lo));
  CHECK(assign_parents(regions, hi) == testing::oracle_parents(regions, hi));
  // The edge count never grows with t_c even when depth does.
  auto edges = [](const std::vector<int>& parents) {
    return std::count_if(parents.begin(), parents.end(), [](int x) { return x >= 0; });
  };
  CHECK(edges(assign_parents(regions, hi)) <= edges(assign_parents(regions, lo)));
  CHECK(d_hi >= d_lo);
}

TEST_CASE("group_and_count examples") {
  const SceneTreeParams p;
  CHECK(count_phrase(3, p) == "3");
  CHECK(count_phrase(4, p) == "4");
  CHECK(count_phrase(5, p) == "several");
  CHECK(count_phrase(9, p) == "several");
  CHECK(count_phrase(12, p) == "many");
  for (int n = 2; n < 30; ++n) CHECK(count_phrase(n, p) == testing::oracle_count_phrase(n, p));

  SUBCASE("3 apples") {
    std::vector<BoxAnnotation> boxes;
    for (int i = 0; i < 3; ++i) boxes.push_back(ann("apples", {10.0 + 40 * i, 10, 20, 20}));
    const auto tree = build_scene(boxes, kImage, p);
    REQUIRE(tree.roots.size() == 1);
    CHECK(tree.roots[0].is_group);
    CHECK(tree.roots[0].count_phrase == "3");
    CHECK(serialize_tree(tree, kImage).starts_with("3 apples"));
  }
  SUBCASE("12 people become many with averaged size") {
    std::vector<BoxAnnotation> boxes;
    for (int i = 0; i < 12; ++i) boxes.push_back(ann("person", {15.0 * i, 50, 10, 20.0 + (i % 2) * 10}));
    const auto tree = build_scene(boxes, kImage, p);
    REQUIRE(tree.roots.size() == 1);
    CHECK(tree.roots[0].count_phrase == "many");
    CHECK(tree.roots[0].region.bbox.w == doctest::Approx(10));
    CHECK(tree.roots[0].region.bbox.h == doctest::Approx(25));
    CHECK(serialize_tree(tree, kImage).find("many people") == 0);
  }
}

TEST_CASE("serialize_tree") {
  CHECK(serialize_tree(SceneTree{}, kImage).empty());
  const auto one = serialize_tree(build_scene(std::vector{ann("dog", {30, 45, 40, 30})}, kImage, {}), kImage);
  CHECK(one.find("dog") != std::string::npos);
  CHECK(one.find("(50, 60)") != std::string::npos);
  CHECK(one.find("40x30") != std::string::npos);
  CHECK(std::count(one.begin(), one.end(), '\n') == 1);
}

TEST_CASE("nested fixture matches the golden render") {
  const ImageRef image{"t", "kitchen", "kitchen.jpg", 640, 480};
  std::vector<BoxAnnotation> boxes{
      ann("table", {40, 260, 560, 200}, 0.55),  ann("plate", {80, 300, 120, 60}, 0.5),
      ann("apple", {100, 310, 30, 30}, 0.5),    ann("apple", {140, 312, 30, 30}, 0.5),
      ann("apple", {170, 315, 28, 28}, 0.5),    ann("person", {380, 20, 180, 420}, 0.3),
      ann("face", {430, 40, 80, 90}, 0.3),      ann("person", {381, 21, 179, 418}, 0.31),
      ann("cup", {300, 320, 40, 60}, 0.5),      ann("window", {20, 10, 200, 180}, 0.9),
  };
  boxes[1].attributes = {"white"};
  boxes[8].attributes = {"red"};
  const auto out = serialize_tree(build_scene(boxes, image, {}), image);
  std::ifstream in(std::string(VIG_TEST_DATA_DIR) + "/kitchen_tree.txt");
  REQUIRE(in.good());
  std::stringstream golden;
  golden << in.rdbuf();
  CHECK(out == golden.str());

  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(boxes.begin(), boxes.end(), rng);
    CHECK(serialize_tree(build_scene(boxes, image, {}), image) == out);
  }
}

TEST_CASE("random scenes agree with the oracles") {
  std::mt19937_64 rng(99);
  const auto image = testing::small_image();
  for (int trial = 0; trial < 60; ++trial) {
    const testing::SceneGenOptions opts{20, trial % 2 ? 0.6 : 0.0, trial % 3 ? 0.5 : 0.0};
    const auto boxes = testing::random_scene(rng, image, opts);
    const auto p = testing::random_params(rng);
    const auto err = testing::scene_mismatch(boxes, image, p);
    CAPTURE(trial);
    CHECK_MESSAGE(!err, (err ? *err : ""));

    auto shuffled = boxes;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(serialize_tree(build_scene(shuffled, image, p), image) ==
          serialize_tree(build_scene(boxes, image, p), image));
  }
}
