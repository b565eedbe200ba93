#pragma once

// Segmentation evaluation: region overlap (Dice, Jaccard), boundary shape
// (Hausdorff), boundary-band error (trimap) and maximum boundary F-score.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "convmcd/error.hpp"
#include "convmcd/raster.hpp"

namespace convmcd {

struct Overlap {
  double dice = 0.0;
  double jaccard = 0.0;
};

/// Dice 2|A n B| / (|A| + |B|) and Jaccard |A n B| / |A u B|; (1, 1) when both masks are empty.
inline Overlap dice_jaccard(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred.width(), pred.height(), gt.width(), gt.height(), "dice_jaccard");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    a += pred[i];
    b += gt[i];
    both += pred[i] && gt[i];
  }
  if (a + b == 0) return {1.0, 1.0};
  const double inter = static_cast<double>(both);
  return {2.0 * inter / static_cast<double>(a + b), inter / static_cast<double>(a + b - both)};
}

namespace detail {
// Largest distance from a pixel of `from` to the nearest pixel of `to`.
inline double directed_hausdorff(const BinaryMask& from, const BinaryMask& to) {
  const auto sq = squared_distance_transform(to);
  double worst = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]) worst = std::max(worst, sq[i]);
  }
  return std::sqrt(worst);
}
}  // namespace detail

/// Symmetric Hausdorff distance between the inner boundaries of the two masks.
inline double hausdorff(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred.width(), pred.height(), gt.width(), gt.height(), "hausdorff");
  const auto bp = boundary(pred);
  const auto bg = boundary(gt);
  const bool ep = !bp.any(), eg = !bg.any();
  if (ep && eg) return 0.0;
  if (ep || eg) throw EmptyBoundary(ep ? "predicted mask has no boundary" : "ground-truth mask has no boundary");
  return std::max(detail::directed_hausdorff(bp, bg), detail::directed_hausdorff(bg, bp));
}

inline BinaryMask threshold(const ImageGrid<double>& prob, double t) {
  BinaryMask out(prob.width(), prob.height());
  for (std::size_t i = 0; i < prob.size(); ++i) out.set(i, prob[i] >= t);
  return out;
}

inline ImageGrid<double> as_probability(const BinaryMask& m) {
  ImageGrid<double> out(m.width(), m.height());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 1.0 : 0.0;
  return out;
}

struct TrimapCurve {
  std::vector<int> widths;
  std::vector<double> errors;
  std::vector<std::size_t> band_sizes;
  std::vector<std::size_t> misclassified;
};

inline std::vector<int> default_trimap_widths() {
  std::vector<int> w(20);
  for (int i = 0; i < 20; ++i) w[i] = i + 1;
  return w;
}

inline void validate_widths(const std::vector<int>& widths) {
  if (widths.empty()) throw InvalidArgument("trimap widths must not be empty");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] <= 0) throw InvalidArgument("trimap widths must be positive");
    if (i > 0 && widths[i] <= widths[i - 1]) throw InvalidArgument("trimap widths must be strictly increasing");
  }
}

/// Misclassification rate inside the band of pixels within `w` of the
/// ground-truth boundary, for each width. Probabilities are thresholded at 0.5.
inline TrimapCurve trimap_curve(const ImageGrid<double>& pred_prob, const BinaryMask& gt,
                                const std::vector<int>& widths) {
  require_same_shape(pred_prob.width(), pred_prob.height(), gt.width(), gt.height(), "trimap_curve");
  validate_widths(widths);
  const auto edge = boundary(gt);
  if (!edge.any()) throw EmptyBoundary("ground-truth mask has no boundary");
  const auto sq = squared_distance_transform(edge);
  const auto pred = threshold(pred_prob, 0.5);
  TrimapCurve curve;
  for (int w : widths) {
    const double limit = static_cast<double>(w) * w;
    std::size_t band = 0, wrong = 0;
    for (std::size_t i = 0; i < sq.size(); ++i) {
      if (sq[i] > limit) continue;
      ++band;
      wrong += pred[i] != gt[i];
    }
    curve.widths.push_back(w);
    curve.band_sizes.push_back(band);
    curve.misclassified.push_back(wrong);
    curve.errors.push_back(static_cast<double>(wrong) / static_cast<double>(band));
  }
  return curve;
}

inline TrimapCurve trimap_curve(const BinaryMask& pred, const BinaryMask& gt, const std::vector<int>& widths) {
  return trimap_curve(as_probability(pred), gt, widths);
}

inline std::vector<double> default_mf_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 19; ++k) t.push_back(k / 20.0);
  return t;
}

struct BoundaryScore {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Boundary precision/recall/F at one threshold. A boundary pixel counts as
/// matched when the other boundary has a pixel within `tolerance`.
inline BoundaryScore boundary_score(const ImageGrid<double>& pred_prob, const BinaryMask& gt_edge,
                                    const ImageGrid<double>& gt_edge_sq, double tolerance, double t) {
  const auto pred_edge = boundary(threshold(pred_prob, t));
  BoundaryScore s;
  s.threshold = t;
  const double limit = tolerance * tolerance;
  std::size_t np = 0, mp = 0, ng = 0, mg = 0;
  for (std::size_t i = 0; i < pred_edge.size(); ++i) {
    if (!pred_edge[i]) continue;
    ++np;
    mp += gt_edge_sq[i] <= limit;
  }
  if (np > 0) {
    const auto pred_sq = squared_distance_transform(pred_edge);
    for (std::size_t i = 0; i < gt_edge.size(); ++i) {
      if (!gt_edge[i]) continue;
      ++ng;
      mg += pred_sq[i] <= limit;
    }
    s.precision = static_cast<double>(mp) / static_cast<double>(np);
    s.recall = static_cast<double>(mg) / static_cast<double>(ng);
  }
  s.f = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

/// Maximum boundary F-score over the given thresholds.
inline double boundary_mf(const ImageGrid<double>& pred_prob, const BinaryMask& gt, double tolerance = 2.0,
                          const std::vector<double>& thresholds = default_mf_thresholds()) {
  require_same_shape(pred_prob.width(), pred_prob.height(), gt.width(), gt.height(), "boundary_mf");
  if (tolerance < 0.0) throw InvalidArgument("boundary tolerance must be >= 0");
  if (thresholds.empty()) throw InvalidArgument("boundary_mf needs at least one threshold");
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw InvalidArgument("boundary_mf thresholds must lie in (0, 1)");
  }
  const auto gt_edge = boundary(gt);
  if (!gt_edge.any()) throw EmptyBoundary("ground-truth mask has no boundary");
  const auto gt_sq = squared_distance_transform(gt_edge);
  double best = 0.0;
  for (double t : thresholds) best = std::max(best, boundary_score(pred_prob, gt_edge, gt_sq, tolerance, t).f);
  return best;
}

inline double boundary_mf(const BinaryMask& pred, const BinaryMask& gt, double tolerance = 2.0,
                          const std::vector<double>& thresholds = default_mf_thresholds()) {
  return boundary_mf(as_probability(pred), gt, tolerance, thresholds);
}

struct MetricProtocol {
  std::vector<int> trimap_widths = default_trimap_widths();
  double mf_tolerance = 2.0;
  std::vector<double> mf_thresholds = default_mf_thresholds();
};

struct ImageMetrics {
  std::string name;
  double dice = 0.0;
  double jaccard = 0.0;
  std::optional<double> hd;  // null when exactly one side has no boundary
  std::optional<double> mf;  // null when the ground truth has no boundary
  std::optional<TrimapCurve> trimap;
  std::vector<std::string> warnings;
};

struct MeanMetrics {
  double dice = 0.0;
  double jaccard = 0.0;
  std::optional<double> hd;
  std::optional<double> mf;
  std::size_t images = 0;
  std::size_t hd_images = 0;
  std::size_t mf_images = 0;
};

struct MetricsReport {
  std::vector<ImageMetrics> images;
  MeanMetrics mean;
  std::optional<TrimapCurve> trimap;  // pooled over images: total misclassified / total band
};

/// All metrics for one prediction. Boundary failures degrade to null plus a warning.
inline ImageMetrics evaluate_image(std::string name, const ImageGrid<double>& pred_prob, const BinaryMask& gt,
                                   const MetricProtocol& protocol, bool with_trimap) {
  ImageMetrics m;
  m.name = std::move(name);
  const auto pred = threshold(pred_prob, 0.5);
  const auto overlap = dice_jaccard(pred, gt);
  m.dice = overlap.dice;
  m.jaccard = overlap.jaccard;
  try {
    m.hd = hausdorff(pred, gt);
  } catch (const EmptyBoundary& e) {
    m.warnings.push_back(std::string("hd: ") + e.what());
  }
  try {
    m.mf = boundary_mf(pred_prob, gt, protocol.mf_tolerance, protocol.mf_thresholds);
  } catch (const EmptyBoundary& e) {
    m.warnings.push_back(std::string("mf: ") + e.what());
  }
  if (with_trimap) {
    try {
      m.trimap = trimap_curve(pred_prob, gt, protocol.trimap_widths);
    } catch (const EmptyBoundary& e) {
      m.warnings.push_back(std::string("trimap: ") + e.what());
    }
  }
  return m;
}

/// Means in image order; HD and MF average only the images where they exist.
inline MetricsReport aggregate(std::vector<ImageMetrics> images) {
  MetricsReport report;
  report.images = std::move(images);
  auto& mean = report.mean;
  double hd_sum = 0.0, mf_sum = 0.0;
  TrimapCurve pooled;
  bool any_trimap = false;
  for (const auto& m : report.images) {
    mean.dice += m.dice;
    mean.jaccard += m.jaccard;
    ++mean.images;
    if (m.hd) {
      hd_sum += *m.hd;
      ++mean.hd_images;
    }
    if (m.mf) {
      mf_sum += *m.mf;
      ++mean.mf_images;
    }
    if (m.trimap) {
      if (!any_trimap) {
        pooled.widths = m.trimap->widths;
        pooled.band_sizes.assign(pooled.widths.size(), 0);
        pooled.misclassified.assign(pooled.widths.size(), 0);
        any_trimap = true;
      }
      for (std::size_t k = 0; k < pooled.widths.size(); ++k) {
        pooled.band_sizes[k] += m.trimap->band_sizes[k];
        pooled.misclassified[k] += m.trimap->misclassified[k];
      }
    }
  }
  if (mean.images > 0) {
    mean.dice /= static_cast<double>(mean.images);
    mean.jaccard /= static_cast<double>(mean.images);
  }
  if (mean.hd_images > 0) mean.hd = hd_sum / static_cast<double>(mean.hd_images);
  if (mean.mf_images > 0) mean.mf = mf_sum / static_cast<double>(mean.mf_images);
  if (any_trimap) {
    for (std::size_t k = 0; k < pooled.widths.size(); ++k) {
      pooled.errors.push_back(static_cast<double>(pooled.misclassified[k]) /
                              static_cast<double>(pooled.band_sizes[k]));
    }
    report.trimap = std::move(pooled);
  }
  return report;
}

}  // namespace convmcd
