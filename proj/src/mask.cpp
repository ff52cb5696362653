#include "vig/mask.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "vig/error.hpp"

namespace vig {

Box box_intersection(const Box& a, const Box& b) {
  const double x0 = std::max(a.x, b.x);
  const double y0 = std::max(a.y, b.y);
  const double x1 = std::min(a.right(), b.right());
  const double y1 = std::min(a.bottom(), b.bottom());
  if (x1 <= x0 || y1 <= y0) {
    return Box{x0, y0, 0, 0};
  }
  return Box{x0, y0, x1 - x0, y1 - y0};
}

Box box_union(const Box& a, const Box& b) {
  const double x0 = std::min(a.x, b.x);
  const double y0 = std::min(a.y, b.y);
  const double x1 = std::max(a.right(), b.right());
  const double y1 = std::max(a.bottom(), b.bottom());
  return Box{x0, y0, x1 - x0, y1 - y0};
}

namespace {

// Sorts and coalesces overlapping or touching runs.
std::vector<Mask::Run> normalize_runs(std::vector<Mask::Run> runs) {
  std::erase_if(runs, [](const Mask::Run& r) { return r.end <= r.begin; });
  std::sort(runs.begin(), runs.end(),
            [](const Mask::Run& a, const Mask::Run& b) { return a.begin < b.begin; });
  std::vector<Mask::Run> out;
  out.reserve(runs.size());
  for (const auto& r : runs) {
    if (!out.empty() && r.begin <= out.back().end) {
      out.back().end = std::max(out.back().end, r.end);
    } else {
      out.push_back(r);
    }
  }
  return out;
}

void require_same_grid(const Mask& a, const Mask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw MaskError(fmt::format("mask grids differ: {}x{} vs {}x{}", a.width(), a.height(),
                                b.width(), b.height()));
  }
}

}  // namespace

Mask::Mask(int width, int height, std::vector<Run> runs)
    : width_(width), height_(height), runs_(normalize_runs(std::move(runs))) {
  if (width <= 0 || height <= 0) {
    throw MaskError(fmt::format("invalid mask grid {}x{}", width, height));
  }
  const std::int64_t total = std::int64_t{width} * height;
  for (const auto& r : runs_) {
    if (r.begin < 0 || r.end > total) {
      throw MaskError("mask run outside grid");
    }
    area_ += r.end - r.begin;
  }
}

Mask Mask::from_rle(std::string_view rle) {
  const auto colon = rle.find(':');
  const auto x = rle.find('x');
  if (colon == std::string_view::npos || x == std::string_view::npos || x > colon) {
    throw MaskError(fmt::format("malformed mask rle header: '{}'", rle.substr(0, 32)));
  }
  auto parse_int = [&](std::string_view s) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw MaskError(fmt::format("malformed mask rle number '{}'", s));
    }
    return v;
  };
  const auto w = parse_int(rle.substr(0, x));
  const auto h = parse_int(rle.substr(x + 1, colon - x - 1));
  if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
    throw MaskError("mask rle grid out of range");
  }
  std::vector<Run> runs;
  std::int64_t pos = 0;
  bool foreground = false;
  std::string_view rest = rle.substr(colon + 1);
  while (!rest.empty()) {
    const auto b = rest.find_first_not_of(' ');
    if (b == std::string_view::npos) break;
    rest.remove_prefix(b);
    const auto e = std::min(rest.find(' '), rest.size());
    const auto count = parse_int(rest.substr(0, e));
    rest.remove_prefix(e);
    if (count < 0) {
      throw MaskError("negative run length in mask rle");
    }
    if (foreground && count > 0) {
      runs.push_back({pos, pos + count});
    }
    pos += count;
    foreground = !foreground;
  }
  if (pos > w * h) {
    throw MaskError("mask rle covers more pixels than its grid");
  }
  return Mask(static_cast<int>(w), static_cast<int>(h), std::move(runs));
}

Mask Mask::from_rect(int width, int height, const Box& rect) {
  const auto x0 = std::clamp<std::int64_t>(std::llround(std::floor(rect.x)), 0, width);
  const auto y0 = std::clamp<std::int64_t>(std::llround(std::floor(rect.y)), 0, height);
  const auto x1 = std::clamp<std::int64_t>(std::llround(std::ceil(rect.right())), 0, width);
  const auto y1 = std::clamp<std::int64_t>(std::llround(std::ceil(rect.bottom())), 0, height);
  std::vector<Run> runs;
  if (x1 > x0) {
    for (auto row = y0; row < y1; ++row) {
      runs.push_back({row * width + x0, row * width + x1});
    }
  }
  return Mask(width, height, std::move(runs));
}

Mask Mask::from_bitmap(int width, int height, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw MaskError("bitmap size does not match grid");
  }
  std::vector<Run> runs;
  std::int64_t i = 0;
  const auto n = static_cast<std::int64_t>(pixels.size());
  while (i < n) {
    if (!pixels[i]) {
      ++i;
      continue;
    }
    auto j = i;
    while (j < n && pixels[j]) ++j;
    runs.push_back({i, j});
    i = j;
  }
  return Mask(width, height, std::move(runs));
}

std::string Mask::to_rle() const {
  std::string out = fmt::format("{}x{}:", width_, height_);
  std::int64_t pos = 0;
  bool first = true;
  for (const auto& r : runs_) {
    if (!first) out += ' ';
    out += fmt::format("{} {}", r.begin - pos, r.end - r.begin);
    first = false;
    pos = r.end;
  }
  return out;
}

std::vector<std::uint8_t> Mask::to_bitmap() const {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(width_) * height_, 0);
  for (const auto& r : runs_) {
    std::fill(px.begin() + r.begin, px.begin() + r.end, std::uint8_t{1});
  }
  return px;
}

Box Mask::bounds() const {
  if (runs_.empty()) return Box{};
  std::int64_t min_x = width_, max_x = -1;
  const std::int64_t min_y = runs_.front().begin / width_;
  const std::int64_t max_y = (runs_.back().end - 1) / width_;
  for (const auto& r : runs_) {
    const auto first_row = r.begin / width_;
    const auto last_row = (r.end - 1) / width_;
    if (first_row != last_row) {
      // Run wraps across a row boundary: spans the full width somewhere.
      min_x = 0;
      max_x = width_ - 1;
      continue;
    }
    min_x = std::min(min_x, r.begin % width_);
    max_x = std::max(max_x, (r.end - 1) % width_);
  }
  return Box{static_cast<double>(min_x), static_cast<double>(min_y),
             static_cast<double>(max_x - min_x + 1), static_cast<double>(max_y - min_y + 1)};
}

std::int64_t intersection_area(const Mask& a, const Mask& b) {
  require_same_grid(a, b);
  const auto& ra = a.runs();
  const auto& rb = b.runs();
  std::int64_t total = 0;
  std::size_t i = 0, j = 0;
  while (i < ra.size() && j < rb.size()) {
    const auto lo = std::max(ra[i].begin, rb[j].begin);
    const auto hi = std::min(ra[i].end, rb[j].end);
    if (hi > lo) total += hi - lo;
    if (ra[i].end < rb[j].end) {
      ++i;
    } else {
      ++j;
    }
  }
  return total;
}

Mask mask_union(const Mask& a, const Mask& b) {
  require_same_grid(a, b);
  std::vector<Mask::Run> runs;
  runs.reserve(a.runs().size() + b.runs().size());
  runs.insert(runs.end(), a.runs().begin(), a.runs().end());
  runs.insert(runs.end(), b.runs().begin(), b.runs().end());
  return Mask(a.width(), a.height(), std::move(runs));
}

}  // namespace vig
