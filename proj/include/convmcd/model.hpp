#pragma once

// The Conv-MCD head, a toy encoder-decoder backbone to attach it to, the
// differentiable multi-task loss, and the optimizers used to train them.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "convmcd/autograd.hpp"
#include "convmcd/loss.hpp"
#include "convmcd/targets.hpp"

namespace convmcd {

/// Seeded generator with a platform-independent mapping to doubles.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)); }

private:
  std::mt19937_64 engine_;
};

namespace ag {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// 3x3, stride 1, pad 1 convolution layer. Weights and biases start uniform in
/// +-sqrt(1 / fan_in) with fan_in = 9 * in_channels.
struct Conv3x3 {
  Tensor weight;  // [out, in, 3, 3]
  Tensor bias;    // [out]

  static Conv3x3 init(int in_channels, int out_channels, Rng& rng) {
    const double bound = std::sqrt(1.0 / (9.0 * in_channels));
    std::vector<double> w(static_cast<std::size_t>(out_channels) * in_channels * 9);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    std::vector<double> b(static_cast<std::size_t>(out_channels));
    for (auto& v : b) v = rng.uniform(-bound, bound);
    return {Tensor::from({out_channels, in_channels, 3, 3}, std::move(w), true),
            Tensor::from({out_channels}, std::move(b), true)};
  }

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

struct PredictionTensors {
  Tensor mask_logits;
  std::optional<Tensor> contour_logits;
  std::optional<Tensor> distance_raw;

  PredictionTriple values() const {
    PredictionTriple p;
    p.mask_logits = mask_logits.planes();
    if (contour_logits) p.contour_logits = contour_logits->planes();
    if (distance_raw) p.distance_raw = distance_raw->planes();
    return p;
  }
};

/// Parallel 3x3 convolutions over one shared feature map: mask (classes),
/// contour (classes) and distance (1) heads, per variant.
class ConvMCDHead {
public:
  ConvMCDHead(HeadConfig config, Rng& rng) : config_(config) {
    mask_ = Conv3x3::init(config.in_channels(), config.mask_outputs(), rng);
    if (config.contour_outputs() > 0) contour_ = Conv3x3::init(config.in_channels(), config.contour_outputs(), rng);
    if (config.distance_outputs() > 0) distance_ = Conv3x3::init(config.in_channels(), config.distance_outputs(), rng);
  }

  const HeadConfig& config() const noexcept { return config_; }

  /// Raw logits; activations are applied by the loss.
  PredictionTensors forward(const Tensor& features) const {
    if (features.shape().size() != 3 || features.dim(0) != config_.in_channels()) {
      throw ShapeMismatch("head expects [" + std::to_string(config_.in_channels()) + ",H,W] features, got " +
                          shape_string(features.shape()));
    }
    PredictionTensors out{mask_(features), std::nullopt, std::nullopt};
    if (contour_) out.contour_logits = (*contour_)(features);
    if (distance_) out.distance_raw = (*distance_)(features);
    return out;
  }

  std::vector<NamedParameter> parameters() const {
    std::vector<NamedParameter> out{{"head.mask.weight", mask_.weight}, {"head.mask.bias", mask_.bias}};
    if (contour_) {
      out.push_back({"head.contour.weight", contour_->weight});
      out.push_back({"head.contour.bias", contour_->bias});
    }
    if (distance_) {
      out.push_back({"head.distance.weight", distance_->weight});
      out.push_back({"head.distance.bias", distance_->bias});
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
  }

private:
  HeadConfig config_;
  Conv3x3 mask_;
  std::optional<Conv3x3> contour_;
  std::optional<Conv3x3> distance_;
};

struct ToyNetConfig {
  int input_channels = 1;
  int features = 8;     // K, channels handed to the head
  int bottleneck = 16;  // channels at half resolution
  HeadVariant variant = HeadVariant::mcd;
};

/// Two-level encoder-decoder:
///   conv+relu x2 -> maxpool2 -> conv+relu x2 -> upsample2 -> conv+relu x2 -> head.
class ToyNet {
public:
  ToyNet(const ToyNetConfig& config, std::uint64_t seed) : ToyNet(config, Rng(seed)) {}

  const ToyNetConfig& config() const noexcept { return config_; }
  const ConvMCDHead& head() const noexcept { return head_; }

  Tensor features(const Tensor& image) const {
    Tensor x = relu(enc1a_(image));
    x = relu(enc1b_(x));
    x = maxpool2(x);
    x = relu(enc2a_(x));
    x = relu(enc2b_(x));
    x = upsample_nearest2(x);
    x = relu(dec1a_(x));
    return relu(dec1b_(x));
  }

  PredictionTensors forward(const Tensor& image) const { return head_.forward(features(image)); }

  std::vector<NamedParameter> parameters() const {
    std::vector<NamedParameter> out;
    auto add = [&](const char* name, const Conv3x3& c) {
      out.push_back({std::string(name) + ".weight", c.weight});
      out.push_back({std::string(name) + ".bias", c.bias});
    };
    add("enc1a", enc1a_);
    add("enc1b", enc1b_);
    add("enc2a", enc2a_);
    add("enc2b", enc2b_);
    add("dec1a", dec1a_);
    add("dec1b", dec1b_);
    for (auto& p : head_.parameters()) out.push_back(std::move(p));
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
  }

private:
  // Backbone is drawn first, then the mask head, so the mask path gets the
  // same initial weights for every variant.
  ToyNet(const ToyNetConfig& config, Rng rng)
      : config_(config),
        enc1a_(Conv3x3::init(config.input_channels, config.features, rng)),
        enc1b_(Conv3x3::init(config.features, config.features, rng)),
        enc2a_(Conv3x3::init(config.features, config.bottleneck, rng)),
        enc2b_(Conv3x3::init(config.bottleneck, config.bottleneck, rng)),
        dec1a_(Conv3x3::init(config.bottleneck, config.features, rng)),
        dec1b_(Conv3x3::init(config.features, config.features, rng)),
        head_(HeadConfig(config.features, config.variant), rng) {}

  ToyNetConfig config_;
  Conv3x3 enc1a_, enc1b_, enc2a_, enc2b_, dec1a_, dec1b_;
  ConvMCDHead head_;
};

struct LossTensors {
  Tensor total;
  LossParts parts;
};

/// Differentiable counterpart of convmcd::total_loss; the scalar values agree bit for bit.
inline LossTensors total_loss(const PredictionTensors& pred, const TargetBundle& targets, const LossWeights& w,
                              HeadVariant variant) {
  w.validate();
  if (pred.contour_logits.has_value() != has_contour_head(variant) ||
      pred.distance_raw.has_value() != has_distance_head(variant)) {
    throw VariantMismatch("prediction heads do not match variant " + std::string(to_string(variant)));
  }
  auto check = [&](const Tensor& t, const char* what) {
    if (t.shape().size() != 3) throw ShapeMismatch(std::string(what) + ": expected [C,H,W]");
    require_same_shape(t.dim(2), t.dim(1), targets.mask.width(), targets.mask.height(), what);
  };
  check(pred.mask_logits, "mask head");
  LossTensors out;
  std::vector<std::pair<double, Tensor>> terms;
  Tensor mask = softmax_nll(pred.mask_logits, targets.mask);
  out.parts.mask = mask.item();
  terms.emplace_back(w.mask, mask);
  if (pred.contour_logits) {
    check(*pred.contour_logits, "contour head");
    Tensor contour = softmax_nll(*pred.contour_logits, targets.contour);
    out.parts.contour = contour.item();
    terms.emplace_back(w.contour, contour);
  }
  if (pred.distance_raw) {
    check(*pred.distance_raw, "distance head");
    Tensor distance = mse(sigmoid(*pred.distance_raw), targets.distance);
    out.parts.distance = distance.item();
    terms.emplace_back(w.distance, distance);
  }
  out.total = weighted_sum(terms);
  out.parts.total = out.total.item();
  return out;
}

class Optimizer {
public:
  virtual ~Optimizer() = default;
  virtual void step() = 0;

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

protected:
  explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
  std::vector<Tensor> params_;
};

class Sgd final : public Optimizer {
public:
  Sgd(std::vector<Tensor> params, double lr) : Optimizer(std::move(params)), lr_(lr) {}

  void step() override {
    for (auto& p : params_) {
      auto g = p.grad();
      if (g.empty()) continue;
      auto v = p.mutable_value();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
    }
  }

private:
  double lr_;
};

class Adam final : public Optimizer {
public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : Optimizer(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step() override {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto g = params_[k].grad();
      if (g.empty()) continue;
      auto value = params_[k].mutable_value();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace ag
}  // namespace convmcd
