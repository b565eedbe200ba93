#pragma once

// Auxiliary supervision derived from a ground-truth mask: the dilated
// contour map and the D1/D2/D3 distance maps.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "convmcd/error.hpp"
#include "convmcd/raster.hpp"

namespace convmcd {

enum class DistanceMapKind {
  d1,  // euclidean distance transform of the mask
  d2,  // euclidean distance transform of the contour
  d3,  // signed distance transform of the contour
};

inline std::string_view to_string(DistanceMapKind kind) {
  switch (kind) {
    case DistanceMapKind::d1: return "d1";
    case DistanceMapKind::d2: return "d2";
    case DistanceMapKind::d3: return "d3";
  }
  return "?";
}

inline DistanceMapKind parse_distance_kind(std::string_view s) {
  if (s == "d1" || s == "D1") return DistanceMapKind::d1;
  if (s == "d2" || s == "D2") return DistanceMapKind::d2;
  if (s == "d3" || s == "D3") return DistanceMapKind::d3;
  throw InvalidArgument("unknown distance map kind '" + std::string(s) + "' (expected d1, d2 or d3)");
}

/// Which side of the mask D1 measures.
enum class D1Direction {
  to_foreground,   // 0 on the object, growing outside it
  to_background,   // 0 outside the object, growing towards its interior
};

/// Contour dilation radius: a fixed pixel count, or AUTO which scales the
/// reference radius of 5 px at 256x256 linearly with the shorter side.
class ContourRadius {
public:
  static constexpr int kReferenceRadius = 5;
  static constexpr int kReferenceSize = 256;

  static ContourRadius automatic() { return ContourRadius(); }
  static ContourRadius fixed(int radius) {
    if (radius < 1) throw InvalidArgument("contour radius must be >= 1");
    ContourRadius r;
    r.value_ = radius;
    return r;
  }

  bool is_auto() const noexcept { return !value_.has_value(); }

  int resolve(int width, int height) const noexcept {
    if (value_) return *value_;
    return resolve_auto(width, height);
  }

  static int resolve_auto(int width, int height) noexcept {
    const double scaled =
        kReferenceRadius * static_cast<double>(std::min(width, height)) / kReferenceSize;
    return std::max(1, static_cast<int>(std::lround(scaled)));
  }

  std::string to_string() const { return value_ ? std::to_string(*value_) : "AUTO"; }

  static ContourRadius parse(std::string_view s) {
    if (s == "AUTO" || s == "auto") return automatic();
    int v = 0;
    try {
      std::size_t used = 0;
      v = std::stoi(std::string(s), &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InvalidArgument("radius must be AUTO or a positive integer, got '" + std::string(s) + "'");
    }
    return fixed(v);
  }

private:
  std::optional<int> value_;
};

struct DistanceMap {
  ImageGrid<double> grid;
  DistanceMapKind kind = DistanceMapKind::d2;
  bool normalized = false;
  bool empty_source = false;  // the set the transform was taken from had no pixels
};

struct TargetBundle {
  BinaryMask mask;
  BinaryMask contour;
  DistanceMap distance;
};

inline BinaryMask make_contour(const BinaryMask& mask, ContourRadius radius) {
  const int r = radius.resolve(mask.width(), mask.height());
  BinaryMask edges(mask.width(), mask.height());
  for (const auto& comp : component_boundaries(mask)) {
    for (const auto& p : comp.pixels) edges.set(p.row, p.col, true);
  }
  return dilate_disk(edges, r);
}

inline DistanceMap make_distance(const BinaryMask& mask, const BinaryMask& contour, DistanceMapKind kind,
                                 D1Direction d1_direction = D1Direction::to_foreground) {
  require_same_shape(mask.width(), mask.height(), contour.width(), contour.height(), "make_distance");
  DistanceMap out;
  out.kind = kind;
  switch (kind) {
    case DistanceMapKind::d1: {
      if (d1_direction == D1Direction::to_foreground) {
        auto field = euclidean_distance_transform(mask);
        out.grid = std::move(field.distance);
        out.empty_source = field.empty;
      } else {
        auto field = euclidean_distance_transform(mask.complement());
        out.grid = std::move(field.distance);
        out.empty_source = field.empty;
      }
      break;
    }
    case DistanceMapKind::d2: {
      auto field = euclidean_distance_transform(contour);
      out.grid = std::move(field.distance);
      out.empty_source = field.empty;
      break;
    }
    case DistanceMapKind::d3:
      out.grid = signed_distance_transform(mask, contour);
      break;
  }
  return out;
}

/// Maps a raw distance map into [0, 1] for the sigmoid-activated regression
/// head. D1/D2 divide by the per-image maximum; D3 maps v to
/// 0.5 + 0.5 * v / max|v| so the contour sits at exactly 0.5.
inline DistanceMap normalize_distance(const DistanceMap& d) {
  if (d.normalized) throw InvalidArgument("distance map is already normalized");
  DistanceMap out = d;
  out.normalized = true;
  auto values = out.grid.values();
  if (d.empty_source) {
    std::fill(values.begin(), values.end(), 0.0);
    return out;
  }
  if (d.kind == DistanceMapKind::d3) {
    double peak = 0.0;
    for (double v : values) peak = std::max(peak, std::abs(v));
    for (double& v : values) v = peak > 0.0 ? 0.5 + 0.5 * (v / peak) : 0.5;
    return out;
  }
  const double peak = *std::max_element(values.begin(), values.end());
  if (peak <= 0.0) {
    std::fill(values.begin(), values.end(), 0.0);
    return out;
  }
  for (double& v : values) v /= peak;
  return out;
}

inline TargetBundle make_targets(const BinaryMask& mask, DistanceMapKind kind, ContourRadius radius,
                                 D1Direction d1_direction = D1Direction::to_foreground) {
  TargetBundle bundle;
  bundle.mask = mask;
  bundle.contour = make_contour(mask, radius);
  bundle.distance = normalize_distance(make_distance(mask, bundle.contour, kind, d1_direction));
  return bundle;
}

}  // namespace convmcd
