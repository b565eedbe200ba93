#pragma once

// Conv-MCD head configuration and the combined multi-task loss, evaluated on
// plain channel-major arrays. Nothing here depends on the autodiff engine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "convmcd/error.hpp"
#include "convmcd/raster.hpp"
#include "convmcd/targets.hpp"

namespace convmcd {

/// Channel-major [C, H, W] block of doubles.
struct Planes {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Planes() = default;
  Planes(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  double& at(int c, int r, int col) noexcept {
    return data[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(r) * width + col];
  }
  double at(int c, int r, int col) const noexcept {
    return data[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(r) * width + col];
  }
};

enum class HeadVariant { mcd, mc, md };

inline std::string_view to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::mcd: return "mcd";
    case HeadVariant::mc: return "mc";
    case HeadVariant::md: return "md";
  }
  return "?";
}

inline HeadVariant parse_variant(std::string_view s) {
  if (s == "mcd" || s == "MCD") return HeadVariant::mcd;
  if (s == "mc" || s == "MC") return HeadVariant::mc;
  if (s == "md" || s == "MD") return HeadVariant::md;
  throw InvalidArgument("unknown head variant '" + std::string(s) + "' (expected mcd, mc or md)");
}

inline bool has_contour_head(HeadVariant v) noexcept { return v != HeadVariant::md; }
inline bool has_distance_head(HeadVariant v) noexcept { return v != HeadVariant::mc; }

/// Head geometry. Kernel 3x3, stride 1, padding 1 are fixed.
class HeadConfig {
public:
  static constexpr int kKernel = 3;
  static constexpr int kStride = 1;
  static constexpr int kPadding = 1;
  static constexpr int kRegressionOutputs = 1;

  explicit HeadConfig(int in_channels, HeadVariant variant = HeadVariant::mcd, int num_classes = 2)
      : in_channels_(in_channels), num_classes_(num_classes), variant_(variant) {
    if (in_channels < 1) throw InvalidArgument("head in_channels must be >= 1");
    if (num_classes < 2) throw InvalidArgument("head num_classes must be >= 2");
  }

  int in_channels() const noexcept { return in_channels_; }
  int num_classes() const noexcept { return num_classes_; }
  HeadVariant variant() const noexcept { return variant_; }

  int mask_outputs() const noexcept { return num_classes_; }
  int contour_outputs() const noexcept { return has_contour_head(variant_) ? num_classes_ : 0; }
  int distance_outputs() const noexcept { return has_distance_head(variant_) ? kRegressionOutputs : 0; }
  int total_outputs() const noexcept { return mask_outputs() + contour_outputs() + distance_outputs(); }

  /// Weights of one 3x3 conv from in_channels to `outputs` filters, plus biases when asked.
  std::size_t conv_parameters(int outputs, bool with_bias = true) const noexcept {
    const auto w = static_cast<std::size_t>(kKernel * kKernel) * in_channels_ * outputs;
    return w + (with_bias ? static_cast<std::size_t>(outputs) : 0);
  }

  /// 9 * K * (sum of head outputs) weights, plus one bias per output filter.
  std::size_t parameter_count(bool with_bias = true) const noexcept {
    return conv_parameters(total_outputs(), with_bias);
  }

private:
  int in_channels_;
  int num_classes_;
  HeadVariant variant_;
};

struct LossWeights {
  double mask = 1.0;
  double contour = 1.0;
  double distance = 1.0;

  void validate() const {
    for (double v : {mask, contour, distance}) {
      if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("loss weights must be finite and >= 0");
    }
  }
};

/// Raw head outputs (pre-activation).
struct PredictionTriple {
  Planes mask_logits;                    // [classes, H, W]
  std::optional<Planes> contour_logits;  // [classes, H, W], absent for MD
  std::optional<Planes> distance_raw;    // [1, H, W], absent for MC
};

struct LossParts {
  double total = 0.0;
  double mask = 0.0;
  double contour = 0.0;
  double distance = 0.0;
};

inline constexpr double kLogClamp = 1e-12;

inline void require_finite(const Planes& p, const char* what) {
  for (double v : p.data) {
    if (!std::isfinite(v)) throw NonFinite(std::string(what) + ": non-finite input");
  }
}

/// Per-pixel softmax across channels with max subtraction.
inline Planes softmax2(const Planes& logits) {
  if (logits.channels < 2) throw InvalidArgument("softmax2 needs at least 2 channels");
  require_finite(logits, "softmax2");
  Planes out(logits.channels, logits.height, logits.width);
  const std::size_t n = logits.plane_size();
  const std::size_t cs = static_cast<std::size_t>(logits.channels);
  for (std::size_t i = 0; i < n; ++i) {
    double peak = logits.data[i];
    for (std::size_t c = 1; c < cs; ++c) peak = std::max(peak, logits.data[c * n + i]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cs; ++c) {
      const double e = std::exp(logits.data[c * n + i] - peak);
      out.data[c * n + i] = e;
      sum += e;
    }
    for (std::size_t c = 0; c < cs; ++c) out.data[c * n + i] /= sum;
  }
  return out;
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Planes sigmoid(const Planes& x) {
  require_finite(x, "sigmoid");
  Planes out = x;
  for (double& v : out.data) v = sigmoid(v);
  return out;
}

/// Negative log-likelihood of the labelled class, averaged over pixels.
/// Probabilities are clamped to [kLogClamp, 1] before the log.
inline double nll_loss(const Planes& probs, const BinaryMask& labels) {
  if (probs.channels < 2) throw ShapeMismatch("nll_loss: probabilities need at least 2 channels");
  require_same_shape(probs.width, probs.height, labels.width(), labels.height(), "nll_loss");
  const std::size_t n = probs.plane_size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = labels[i] ? 1 : 0;
    const double p = std::clamp(probs.data[cls * n + i], kLogClamp, 1.0);
    sum -= std::log(p);
  }
  return sum / static_cast<double>(n);
}

/// Mean squared error between a sigmoid-activated prediction and a normalized
/// distance map.
inline double mse_loss(const Planes& pred, const DistanceMap& target) {
  if (pred.channels != 1) throw ShapeMismatch("mse_loss: prediction must have exactly 1 channel");
  require_same_shape(pred.width, pred.height, target.grid.width(), target.grid.height(), "mse_loss");
  if (!target.normalized) throw UnnormalizedTarget();
  const std::size_t n = pred.plane_size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.data[i] - target.grid[i];
    sum += d * d;
  }
  return sum / static_cast<double>(n);
}

inline void check_prediction(const PredictionTriple& pred, const TargetBundle& targets, HeadVariant variant) {
  if (pred.contour_logits.has_value() != has_contour_head(variant) ||
      pred.distance_raw.has_value() != has_distance_head(variant)) {
    throw VariantMismatch("prediction heads do not match variant " + std::string(to_string(variant)));
  }
  auto check = [&](const Planes& p, const char* what) {
    require_same_shape(p.width, p.height, targets.mask.width(), targets.mask.height(), what);
  };
  check(pred.mask_logits, "mask head");
  if (pred.contour_logits) check(*pred.contour_logits, "contour head");
  if (pred.distance_raw) check(*pred.distance_raw, "distance head");
}

/// lambda_mask * L_mask + lambda_contour * L_contour + lambda_distance * L_distance.
/// Absent heads contribute nothing.
inline LossParts total_loss(const PredictionTriple& pred, const TargetBundle& targets, const LossWeights& w,
                            HeadVariant variant) {
  w.validate();
  check_prediction(pred, targets, variant);
  LossParts parts;
  parts.mask = nll_loss(softmax2(pred.mask_logits), targets.mask);
  parts.total = w.mask * parts.mask;
  if (pred.contour_logits) {
    parts.contour = nll_loss(softmax2(*pred.contour_logits), targets.contour);
    parts.total += w.contour * parts.contour;
  }
  if (pred.distance_raw) {
    parts.distance = mse_loss(sigmoid(*pred.distance_raw), targets.distance);
    parts.total += w.distance * parts.distance;
  }
  return parts;
}

}  // namespace convmcd
