#pragma once

// Central finite-difference verification of every differentiable operator
// and of the end-to-end multi-task loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "convmcd/autograd.hpp"
#include "convmcd/model.hpp"
#include "convmcd/targets.hpp"

namespace convmcd {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar inputs perturbed
  bool passed = false;
};

struct GradcheckReport {
  double tolerance = 1e-5;
  std::vector<GradcheckEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }
};

inline constexpr double kFiniteDifferenceStep = 1e-5;
// Denominator floor of the relative error, so gradients that are zero up to
// finite-difference noise are not judged on noise alone.
inline constexpr double kRelativeErrorFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
}

/// Largest relative error between backward() and central differences of
/// `scalar` with respect to every element of every tensor in `inputs`.
inline double max_gradient_error(const std::function<ag::Tensor()>& scalar, std::vector<ag::Tensor> inputs,
                                 std::size_t* checked = nullptr, double h = kFiniteDifferenceStep) {
  for (auto& t : inputs) t.zero_grad();
  scalar().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(t.size(), 0.0);
    std::copy(g.begin(), g.end(), analytic.back().begin());
  }
  double worst = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = scalar().item();
      values[i] = saved - h;
      const double down = scalar().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
      ++count;
    }
  }
  if (checked) *checked = count;
  return worst;
}

namespace detail {

inline ag::Tensor random_tensor(ag::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ag::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ag::Tensor::from(std::move(shape), std::move(v), true);
}

inline std::vector<double> random_coeffs(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

inline BinaryMask random_mask(int w, int h, Rng& rng) {
  return BinaryMask::from_predicate(w, h, [&](int, int) { return rng.uniform() < 0.5; });
}

// A blob mask with a contour and a normalized distance map, for loss checks.
inline TargetBundle toy_targets(int size, DistanceMapKind kind) {
  const double c = (size - 1) / 2.0;
  const double r = size / 3.0;
  const auto mask = BinaryMask::from_predicate(size, size, [&](int y, int x) {
    return (y - c) * (y - c) + (x - c) * (x - c) <= r * r;
  });
  return make_targets(mask, kind, ContourRadius::fixed(1));
}

}  // namespace detail

/// Runs the full suite. Entries: one per differentiable operator, in
/// ag::kDifferentiableOps order, then the end-to-end losses.
inline GradcheckReport gradcheck_all(std::uint64_t seed = 0, double tolerance = 1e-5) {
  using ag::Tensor;
  Rng rng(seed);
  GradcheckReport report;
  report.tolerance = tolerance;
  auto record = [&](std::string name, const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
    GradcheckEntry e;
    e.name = std::move(name);
    e.max_rel_error = max_gradient_error(f, std::move(inputs), &e.checked);
    e.passed = std::isfinite(e.max_rel_error) && e.max_rel_error < tolerance;
    report.entries.push_back(std::move(e));
  };

  {
    auto x = detail::random_tensor({1, 6, 6}, rng);
    auto k = detail::random_tensor({2, 1, 3, 3}, rng);
    auto b = detail::random_tensor({2}, rng);
    auto c = detail::random_coeffs(2 * 36, rng);
    record("conv2d", [=] { return ag::dot(ag::conv2d(x, k, b), c); }, {x, k, b});
  }
  {
    // Inputs kept at least 0.1 away from the kink.
    std::vector<double> v(2 * 16);
    for (auto& e : v) e = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
    auto x = Tensor::from({2, 4, 4}, std::move(v), true);
    auto c = detail::random_coeffs(32, rng);
    record("relu", [=] { return ag::dot(ag::relu(x), c); }, {x});
  }
  {
    auto x = detail::random_tensor({2, 4, 4}, rng);
    auto c = detail::random_coeffs(2 * 4, rng);
    record("maxpool2", [=] { return ag::dot(ag::maxpool2(x), c); }, {x});
  }
  {
    auto x = detail::random_tensor({2, 3, 3}, rng);
    auto c = detail::random_coeffs(2 * 36, rng);
    record("upsample_nearest2", [=] { return ag::dot(ag::upsample_nearest2(x), c); }, {x});
  }
  {
    auto x = detail::random_tensor({1, 4, 4}, rng, -3.0, 3.0);
    auto c = detail::random_coeffs(16, rng);
    record("sigmoid", [=] { return ag::dot(ag::sigmoid(x), c); }, {x});
  }
  {
    auto x = detail::random_tensor({2, 4, 4}, rng, -2.0, 2.0);
    auto labels = detail::random_mask(4, 4, rng);
    record("softmax_nll", [=] { return ag::softmax_nll(x, labels); }, {x});
  }
  {
    auto x = detail::random_tensor({1, 4, 4}, rng, 0.0, 1.0);
    DistanceMap target{ImageGrid<double>(4, 4), DistanceMapKind::d2, true, false};
    for (auto& v : target.grid.values()) v = rng.uniform();
    record("mse", [=] { return ag::mse(x, target); }, {x});
  }
  {
    auto a = detail::random_tensor({3}, rng);
    auto b = detail::random_tensor({3}, rng);
    auto ca = detail::random_coeffs(3, rng);
    auto cb = detail::random_coeffs(3, rng);
    record("weighted_sum",
           [=] { return ag::weighted_sum({{0.7, ag::dot(a, ca)}, {1.3, ag::dot(b, cb)}}); }, {a, b});
  }
  {
    auto x = detail::random_tensor({2, 3}, rng);
    auto c = detail::random_coeffs(6, rng);
    record("dot", [=] { return ag::dot(x, c); }, {x});
  }

  // Head plus loss, with respect to head parameters and the shared features.
  for (auto variant : {HeadVariant::mcd, HeadVariant::mc, HeadVariant::md}) {
    const int size = 6;
    auto features = detail::random_tensor({4, size, size}, rng);
    ag::ConvMCDHead head(HeadConfig(4, variant), rng);
    auto targets = detail::toy_targets(size, DistanceMapKind::d3);
    LossWeights w{1.0, 0.7, 1.3};
    std::vector<Tensor> inputs{features};
    for (const auto& p : head.parameters()) inputs.push_back(p.tensor);
    record("head_total_loss[" + std::string(to_string(variant)) + "]",
           [=] { return ag::total_loss(head.forward(features), targets, w, variant).total; }, inputs);
  }

  // Whole ToyNet with the MCD head on an 8x8 image.
  {
    const int size = 8;
    ag::ToyNet net(ag::ToyNetConfig{}, rng.uniform_int(0, 1 << 30));
    ImageGrid<double> image(size, size);
    for (auto& v : image.values()) v = rng.uniform();
    auto targets = detail::toy_targets(size, DistanceMapKind::d3);
    std::vector<Tensor> inputs;
    for (const auto& p : net.parameters()) inputs.push_back(p.tensor);
    record("toynet_total_loss[mcd]",
           [=] {
             return ag::total_loss(net.forward(Tensor::from_grid(image)), targets, LossWeights{}, HeadVariant::mcd)
                 .total;
           },
           inputs);
  }
  return report;
}

}  // namespace convmcd
