#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vig {

// Axis-aligned box in pixels, top-left origin.
struct Box {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double cx() const { return x + w / 2; }
  double cy() const { return y + h / 2; }

  friend bool operator==(const Box&, const Box&) = default;
  friend auto operator<=>(const Box&, const Box&) = default;
};

Box box_intersection(const Box& a, const Box& b);  // zero-size box when disjoint
Box box_union(const Box& a, const Box& b);         // bounding box of both

// Binary mask over a width x height grid, stored as sorted disjoint
// foreground intervals [begin, end) of row-major pixel indices.
//
// Text form: "<W>x<H>:<c0> <c1> ..." where the counts alternate
// background/foreground starting with background. Pixels past the last
// count are background.
class Mask {
 public:
  struct Run {
    std::int64_t begin;
    std::int64_t end;
    friend bool operator==(const Run&, const Run&) = default;
  };

  Mask() = default;
  Mask(int width, int height, std::vector<Run> runs);

  static Mask from_rle(std::string_view rle);
  static Mask from_rect(int width, int height, const Box& rect);
  static Mask from_bitmap(int width, int height, std::span<const std::uint8_t> pixels);

  std::string to_rle() const;
  std::vector<std::uint8_t> to_bitmap() const;

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<Run>& runs() const { return runs_; }
  std::int64_t area() const { return area_; }
  bool empty() const { return area_ == 0; }

  // Tight pixel bounding box of the foreground; zero box when empty.
  Box bounds() const;

  friend bool operator==(const Mask& a, const Mask& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.runs_ == b.runs_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Run> runs_;
  std::int64_t area_ = 0;
};

// Both masks must share a grid; throws MaskError otherwise.
std::int64_t intersection_area(const Mask& a, const Mask& b);
Mask mask_union(const Mask& a, const Mask& b);

}  // namespace vig
