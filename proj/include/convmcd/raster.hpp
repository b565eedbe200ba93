#pragma once

// Raster primitives: dense grids, binary masks, connected components,
// inner boundaries, disk dilation and exact euclidean distance transforms.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "convmcd/error.hpp"

namespace convmcd {

/// Dense row-major 2-D raster. Element (row, col) lives at data[row * width + col].
template <typename T>
class ImageGrid {
public:
  using value_type = T;

  ImageGrid() = default;

  ImageGrid(int width, int height, T fill = T{}) : width_(width), height_(height) {
    check_dims(width, height);
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  ImageGrid(int width, int height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw ShapeMismatch("grid data length " + std::to_string(data_.size()) + " does not match " +
                          std::to_string(width) + "x" + std::to_string(height));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }

  bool in_bounds(int row, int col) const noexcept {
    return row >= 0 && col >= 0 && row < height_ && col < width_;
  }

  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  T& operator()(int row, int col) noexcept { return data_[index(row, col)]; }
  const T& operator()(int row, int col) const noexcept { return data_[index(row, col)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const ImageGrid<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

private:
  static void check_dims(int width, int height) {
    if (width < 1 || height < 1) {
      throw InvalidArgument("grid dimensions must be at least 1x1, got " + std::to_string(width) +
                            "x" + std::to_string(height));
    }
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct Pixel {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Grid whose every element is exactly 0 or 1.
class BinaryMask {
public:
  BinaryMask() = default;
  BinaryMask(int width, int height) : grid_(width, height, std::uint8_t{0}) {}

  static BinaryMask from_grid(ImageGrid<std::uint8_t> grid) {
    for (auto v : grid.values()) {
      if (v > 1) {
        throw InvalidArgument("binary mask values must be 0 or 1");
      }
    }
    BinaryMask m;
    m.grid_ = std::move(grid);
    return m;
  }

  // Builds a mask from pred(row, col).
  template <typename Pred>
  static BinaryMask from_predicate(int width, int height, Pred&& pred) {
    BinaryMask m(width, height);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        m.set(r, c, static_cast<bool>(pred(r, c)));
      }
    }
    return m;
  }

  int width() const noexcept { return grid_.width(); }
  int height() const noexcept { return grid_.height(); }
  std::size_t size() const noexcept { return grid_.size(); }
  bool in_bounds(int row, int col) const noexcept { return grid_.in_bounds(row, col); }

  bool operator()(int row, int col) const noexcept { return grid_(row, col) != 0; }
  bool operator[](std::size_t i) const noexcept { return grid_[i] != 0; }
  void set(int row, int col, bool on) noexcept { grid_(row, col) = on ? 1 : 0; }
  void set(std::size_t i, bool on) noexcept { grid_[i] = on ? 1 : 0; }

  const ImageGrid<std::uint8_t>& grid() const noexcept { return grid_; }

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(grid_.values().begin(), grid_.values().end(), 1));
  }
  bool any() const noexcept {
    return std::any_of(grid_.values().begin(), grid_.values().end(), [](auto v) { return v != 0; });
  }

  bool subset_of(const BinaryMask& other) const noexcept {
    if (width() != other.width() || height() != other.height()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if ((*this)[i] && !other[i]) return false;
    }
    return true;
  }

  BinaryMask complement() const {
    BinaryMask out(width(), height());
    for (std::size_t i = 0; i < size(); ++i) out.set(i, !(*this)[i]);
    return out;
  }

  template <typename U>
  bool same_shape(const ImageGrid<U>& g) const noexcept {
    return grid_.same_shape(g);
  }
  bool same_shape(const BinaryMask& m) const noexcept { return grid_.same_shape(m.grid_); }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
  ImageGrid<std::uint8_t> grid_;
};

/// Deduplicated list of in-bounds pixel coordinates.
struct PixelSet {
  std::vector<Pixel> pixels;

  std::size_t size() const noexcept { return pixels.size(); }
  bool empty() const noexcept { return pixels.empty(); }
};

inline PixelSet foreground_pixels(const BinaryMask& mask) {
  PixelSet out;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (mask(r, c)) out.pixels.push_back({r, c});
    }
  }
  return out;
}

inline BinaryMask to_mask(const PixelSet& set, int width, int height) {
  BinaryMask out(width, height);
  for (const auto& p : set.pixels) {
    if (!out.in_bounds(p.row, p.col)) {
      throw InvalidArgument("pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                            ") outside " + std::to_string(width) + "x" + std::to_string(height));
    }
    out.set(p.row, p.col, true);
  }
  return out;
}

enum class Connectivity { four = 4, eight = 8 };

namespace detail {

class DisjointSet {
public:
  explicit DisjointSet(std::size_t reserve = 0) { parent_.reserve(reserve); }

  std::uint32_t make() {
    auto id = static_cast<std::uint32_t>(parent_.size());
    parent_.push_back(id);
    return id;
  }

  std::uint32_t find(std::uint32_t x) {
    std::uint32_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      auto next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  // The smaller label becomes the root so roots follow scan order.
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

private:
  std::vector<std::uint32_t> parent_;
};

}  // namespace detail

/// Maximal connected foreground regions, ordered by their first pixel in
/// row-major scan order. Two-pass labeling with union-find.
inline std::vector<PixelSet> connected_components(const BinaryMask& mask,
                                                  Connectivity connectivity = Connectivity::eight) {
  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  const int w = mask.width();
  const int h = mask.height();
  std::vector<std::uint32_t> labels(mask.size(), kNone);
  detail::DisjointSet sets(mask.size() / 4 + 1);

  // Already-visited neighbours: W, NW, N, NE (diagonals only for 8-connectivity).
  static constexpr std::pair<int, int> kBack8[] = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
  static constexpr std::pair<int, int> kBack4[] = {{0, -1}, {-1, 0}};
  const std::span<const std::pair<int, int>> back =
      connectivity == Connectivity::eight ? std::span<const std::pair<int, int>>(kBack8)
                                          : std::span<const std::pair<int, int>>(kBack4);

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      std::uint32_t label = kNone;
      for (auto [dr, dc] : back) {
        const int nr = r + dr;
        const int nc = c + dc;
        if (!mask.in_bounds(nr, nc)) continue;
        const auto nl = labels[static_cast<std::size_t>(nr) * w + nc];
        if (nl == kNone) continue;
        if (label == kNone) {
          label = nl;
        } else {
          sets.unite(label, nl);
        }
      }
      if (label == kNone) label = sets.make();
      labels[static_cast<std::size_t>(r) * w + c] = label;
    }
  }

  std::vector<PixelSet> components;
  std::vector<std::uint32_t> slot_of_root;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto l = labels[static_cast<std::size_t>(r) * w + c];
      if (l == kNone) continue;
      const auto root = sets.find(l);
      if (root >= slot_of_root.size()) slot_of_root.resize(root + 1, kNone);
      if (slot_of_root[root] == kNone) {
        slot_of_root[root] = static_cast<std::uint32_t>(components.size());
        components.emplace_back();
      }
      components[slot_of_root[root]].pixels.push_back({r, c});
    }
  }
  return components;
}

/// Inner boundary: foreground pixels with at least one 4-neighbour that is
/// background or outside the image.
inline BinaryMask boundary(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  BinaryMask out(w, h);
  auto background = [&](int r, int c) { return !mask.in_bounds(r, c) || !mask(r, c); };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      if (background(r - 1, c) || background(r + 1, c) || background(r, c - 1) ||
          background(r, c + 1)) {
        out.set(r, c, true);
      }
    }
  }
  return out;
}

/// Union of the inner boundaries of each 8-connected component. A 4-neighbour
/// that is foreground always belongs to the same component, so this equals
/// boundary(mask); it is spelled out per component for callers that want the
/// pieces.
inline std::vector<PixelSet> component_boundaries(const BinaryMask& mask) {
  const BinaryMask edge = boundary(mask);
  std::vector<PixelSet> out;
  for (auto& comp : connected_components(mask, Connectivity::eight)) {
    PixelSet b;
    for (const auto& p : comp.pixels) {
      if (edge(p.row, p.col)) b.pixels.push_back(p);
    }
    out.push_back(std::move(b));
  }
  return out;
}

/// Value stored in a distance field computed from an empty mask.
inline constexpr double kNoForeground = std::numeric_limits<double>::max();

struct DistanceField {
  ImageGrid<double> distance;
  bool empty = false;  // source mask had no foreground; distance holds kNoForeground
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas y = (q - v)^2 + f[v] over the finite entries of f.
// All f values are integers, so every output is an exact integer.
inline void lower_envelope_1d(std::span<const double> f, std::span<double> out,
                              std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double fq = f[q] + static_cast<double>(q) * q;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    // z[0] = -inf, so the pop loop never empties the envelope.
    auto intersect = [&](int p) {
      return (fq - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
    };
    double s = intersect(v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = q - v[j];
    out[q] = d * d + f[v[j]];
  }
}

}  // namespace detail

/// Exact squared euclidean distance to the nearest foreground pixel, +inf
/// everywhere when the mask is empty. Separable: a 1-D scan along each row
/// followed by a lower-envelope pass down each column.
inline ImageGrid<double> squared_distance_transform(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  ImageGrid<double> sq(w, h, detail::kInf);

  for (int r = 0; r < h; ++r) {
    int last = -1;
    for (int c = 0; c < w; ++c) {
      if (mask(r, c)) last = c;
      if (last >= 0) sq(r, c) = static_cast<double>(c - last);
    }
    last = -1;
    for (int c = w - 1; c >= 0; --c) {
      if (mask(r, c)) last = c;
      if (last >= 0) sq(r, c) = std::min(sq(r, c), static_cast<double>(last - c));
    }
    for (int c = 0; c < w; ++c) {
      if (sq(r, c) != detail::kInf) sq(r, c) *= sq(r, c);
    }
  }

  std::vector<double> column(static_cast<std::size_t>(h));
  std::vector<double> result(static_cast<std::size_t>(h));
  std::vector<int> v;
  std::vector<double> z;
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) column[r] = sq(r, c);
    detail::lower_envelope_1d(column, result, v, z);
    for (int r = 0; r < h; ++r) sq(r, c) = result[r];
  }
  return sq;
}

/// Exact euclidean distance from every pixel to the nearest foreground pixel
/// (0 on the foreground). An empty mask yields kNoForeground everywhere and
/// empty = true.
inline DistanceField euclidean_distance_transform(const BinaryMask& mask) {
  DistanceField out{ImageGrid<double>(mask.width(), mask.height(), 0.0), !mask.any()};
  if (out.empty) {
    std::fill(out.distance.values().begin(), out.distance.values().end(), kNoForeground);
    return out;
  }
  const auto sq = squared_distance_transform(mask);
  for (std::size_t i = 0; i < sq.size(); ++i) out.distance[i] = std::sqrt(sq[i]);
  return out;
}

/// Closed-disk dilation: a pixel turns on when some foreground pixel lies at
/// integer offset (dr, dc) with dr^2 + dc^2 <= radius^2.
inline BinaryMask dilate_disk(const BinaryMask& mask, int radius) {
  if (radius < 0) throw InvalidArgument("dilation radius must be >= 0");
  if (radius == 0 || !mask.any()) return mask;
  const auto sq = squared_distance_transform(mask);
  const double limit = static_cast<double>(radius) * radius;
  BinaryMask out(mask.width(), mask.height());
  for (std::size_t i = 0; i < sq.size(); ++i) out.set(i, sq[i] <= limit);
  return out;
}

/// Distance to the nearest contour pixel, positive where mask = 1 and
/// negative where mask = 0; exactly +0 on the contour.
inline ImageGrid<double> signed_distance_transform(const BinaryMask& mask, const BinaryMask& contour) {
  require_same_shape(mask.width(), mask.height(), contour.width(), contour.height(),
                     "signed_distance_transform");
  if (!contour.any()) throw EmptyContour();
  auto field = euclidean_distance_transform(contour);
  auto& d = field.distance;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] == 0.0) {
      d[i] = 0.0;
    } else if (!mask[i]) {
      d[i] = -d[i];
    }
  }
  return std::move(d);
}

}  // namespace convmcd
