#pragma once

// Desk-scale training of ToyNet + Conv-MCD head on synthetic shapes.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "convmcd/model.hpp"
#include "convmcd/raster.hpp"
#include "convmcd/targets.hpp"

namespace convmcd {

struct Sample {
  ImageGrid<double> image;
  TargetBundle targets;
};

enum class OptimizerKind { adam, sgd };

struct TrainOptions {
  int epochs = 500;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  HeadVariant variant = HeadVariant::mcd;
  LossWeights weights;
  OptimizerKind optimizer = OptimizerKind::adam;
  int features = 8;
};

struct EpochRecord {
  int epoch = 0;  // 0 is the evaluation before any update
  LossParts loss;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
  ag::ToyNet net;
};

/// Foreground probability: softmax of the mask head, class 1.
inline ImageGrid<double> foreground_probability(const ag::ToyNet& net, const ImageGrid<double>& image) {
  const auto pred = net.forward(ag::Tensor::from_grid(image));
  const Planes probs = softmax2(pred.mask_logits.planes());
  std::vector<double> fg(probs.data.begin() + static_cast<std::ptrdiff_t>(probs.plane_size()),
                         probs.data.begin() + static_cast<std::ptrdiff_t>(2 * probs.plane_size()));
  return ImageGrid<double>(image.width(), image.height(), std::move(fg));
}

inline BinaryMask predict_mask(const ag::ToyNet& net, const ImageGrid<double>& image) {
  const auto prob = foreground_probability(net, image);
  BinaryMask out(image.width(), image.height());
  for (std::size_t i = 0; i < prob.size(); ++i) out.set(i, prob[i] >= 0.5);
  return out;
}

namespace detail {
inline std::unique_ptr<ag::Optimizer> make_optimizer(const ag::ToyNet& net, const TrainOptions& opt) {
  std::vector<ag::Tensor> params;
  for (const auto& p : net.parameters()) params.push_back(p.tensor);
  if (opt.optimizer == OptimizerKind::sgd) return std::make_unique<ag::Sgd>(std::move(params), opt.lr);
  return std::make_unique<ag::Adam>(std::move(params), opt.lr);
}

inline void require_finite(const LossParts& l, int epoch) {
  if (!std::isfinite(l.total) || !std::isfinite(l.mask) || !std::isfinite(l.contour) ||
      !std::isfinite(l.distance)) {
    throw DivergenceDetected("loss became non-finite at epoch " + std::to_string(epoch));
  }
}

inline void accumulate(LossParts& acc, const LossParts& l, double scale) {
  acc.total += scale * l.total;
  acc.mask += scale * l.mask;
  acc.contour += scale * l.contour;
  acc.distance += scale * l.distance;
}
}  // namespace detail

/// Mean loss parts of `net` over `data`, no updates.
inline LossParts evaluate_loss(const ag::ToyNet& net, const std::vector<Sample>& data, const LossWeights& w) {
  LossParts acc;
  const double scale = 1.0 / static_cast<double>(data.size());
  for (const auto& s : data) {
    const auto loss = ag::total_loss(net.forward(ag::Tensor::from_grid(s.image)), s.targets, w, net.config().variant);
    detail::accumulate(acc, loss.parts, scale);
  }
  return acc;
}

/// Batch-size-1 training in fixed sample order. The trace holds the initial
/// evaluation (epoch 0) followed by the mean pre-update loss of every epoch.
/// Deterministic for a given seed.
inline TrainResult train_toy(const std::vector<Sample>& data, const TrainOptions& opt,
                             const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (data.empty()) throw InvalidArgument("train_toy needs at least one sample");
  if (opt.epochs < 0) throw InvalidArgument("epochs must be >= 0");
  opt.weights.validate();
  ag::ToyNetConfig cfg;
  cfg.features = opt.features;
  cfg.variant = opt.variant;
  TrainResult result{{}, ag::ToyNet(cfg, opt.seed)};
  auto& net = result.net;
  auto optimizer = detail::make_optimizer(net, opt);

  EpochRecord initial{0, evaluate_loss(net, data, opt.weights)};
  detail::require_finite(initial.loss, 0);
  result.trace.push_back(initial);
  if (on_epoch) on_epoch(initial);

  const double scale = 1.0 / static_cast<double>(data.size());
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    EpochRecord rec{epoch, {}};
    for (const auto& s : data) {
      ag::LossTensors loss;
      try {
        loss = ag::total_loss(net.forward(ag::Tensor::from_grid(s.image)), s.targets, opt.weights, opt.variant);
      } catch (const NonFinite& e) {
        throw DivergenceDetected("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      detail::require_finite(loss.parts, epoch);
      optimizer->zero_grad();
      loss.total.backward();
      optimizer->step();
      detail::accumulate(rec.loss, loss.parts, scale);
    }
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

/// Synthetic segmentation data: one to three disks or squares per image, the
/// image being 0.25 background / 0.75 foreground plus uniform noise.
inline std::vector<Sample> synthetic_dataset(int count, int size, std::uint64_t seed, DistanceMapKind kind,
                                             ContourRadius radius = ContourRadius::automatic()) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (int n = 0; n < count; ++n) {
    BinaryMask mask(size, size);
    const int shapes = rng.uniform_int(1, 3);
    for (int s = 0; s < shapes; ++s) {
      const bool disk = rng.uniform() < 0.5;
      const int r = rng.uniform_int(size / 10 + 1, size / 5 + 1);
      const int cy = rng.uniform_int(r + 1, size - r - 2);
      const int cx = rng.uniform_int(r + 1, size - r - 2);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const int dy = y - cy, dx = x - cx;
          const bool inside = disk ? dy * dy + dx * dx <= r * r : std::abs(dy) <= r && std::abs(dx) <= r;
          if (inside) mask.set(y, x, true);
        }
      }
    }
    ImageGrid<double> image(size, size);
    for (std::size_t i = 0; i < image.size(); ++i) {
      image[i] = (mask[i] ? 0.75 : 0.25) + rng.uniform(-0.1, 0.1);
    }
    out.push_back({std::move(image), make_targets(mask, kind, radius)});
  }
  return out;
}

}  // namespace convmcd
