#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <string>

#include "convmcd/gradcheck.hpp"
#include "convmcd/train.hpp"
#include "oracles.hpp"

using namespace convmcd;
using ag::Tensor;

namespace {

// Direct 3x3 zero-padded cross-correlation.
std::vector<double> naive_conv(const std::vector<double>& x, int cin, int h, int w, const std::vector<double>& k,
                               const std::vector<double>& b, int cout) {
  std::vector<double> out(static_cast<std::size_t>(cout) * h * w);
  for (int co = 0; co < cout; ++co)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double acc = b[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int sy = y + dy, sx = xx + dx;
              if (sy < 0 || sx < 0 || sy >= h || sx >= w) continue;
              acc += k[((co * cin + ci) * 3 + dy + 1) * 3 + dx + 1] * x[(ci * h + sy) * w + sx];
            }
        out[(co * h + y) * w + xx] = acc;
      }
  return out;
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

std::vector<double> flat_parameters(const ag::ToyNet& net, bool mask_path_only) {
  std::vector<double> out;
  for (const auto& p : net.parameters()) {
    if (mask_path_only && (p.name.starts_with("head.contour") || p.name.starts_with("head.distance"))) continue;
    for (double v : p.tensor.value()) out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("conv2d forward", "[autograd][conv]") {
  Rng rng(1);
  SECTION("identity kernel reproduces the input") {
    const auto xv = random_vec(rng, 25);
    std::vector<double> k(9, 0.0);
    k[4] = 1.0;
    const auto y = ag::conv2d(Tensor::from({1, 5, 5}, xv), Tensor::from({1, 1, 3, 3}, k), Tensor::from({1}, {0.0}));
    CHECK(to_vec(y.value()) == xv);
  }
  SECTION("all-ones kernel on all-ones input counts the taps") {
    const int cin = 3;
    const auto y = ag::conv2d(Tensor::from({cin, 5, 5}, std::vector<double>(75, 1.0)),
                              Tensor::from({1, cin, 3, 3}, std::vector<double>(27, 1.0)), Tensor::from({1}, {0.0}));
    CHECK(y.value()[2 * 5 + 2] == cin * 9);
    CHECK(y.value()[0] == cin * 4);      // corner
    CHECK(y.value()[2] == cin * 6);      // edge
  }
  SECTION("matches the direct loop") {
    for (int trial = 0; trial < 10; ++trial) {
      const int cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
      const int h = rng.uniform_int(1, 7), w = rng.uniform_int(1, 7);
      const auto xv = random_vec(rng, static_cast<std::size_t>(cin) * h * w);
      const auto kv = random_vec(rng, static_cast<std::size_t>(cout) * cin * 9);
      const auto bv = random_vec(rng, static_cast<std::size_t>(cout));
      const auto y = ag::conv2d(Tensor::from({cin, h, w}, xv), Tensor::from({cout, cin, 3, 3}, kv),
                                Tensor::from({cout}, bv));
      const auto expected = naive_conv(xv, cin, h, w, kv, bv, cout);
      REQUIRE(y.size() == expected.size());
      for (std::size_t i = 0; i < expected.size(); ++i) REQUIRE(y.value()[i] == Catch::Approx(expected[i]).margin(1e-13));
    }
  }
  SECTION("shape errors") {
    CHECK_THROWS_AS(ag::conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1})),
                    ShapeMismatch);
    CHECK_THROWS_AS(ag::conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({2})),
                    ShapeMismatch);
  }
}

TEST_CASE("conv2d backward against differences of the direct loop", "[autograd][conv]") {
  // Independent of the library's checker: perturb the naive forward.
  Rng rng(2);
  const int cin = 2, cout = 2, h = 4, w = 5;
  auto xv = random_vec(rng, cin * h * w);
  auto kv = random_vec(rng, cout * cin * 9);
  auto bv = random_vec(rng, cout);
  const auto c = random_vec(rng, cout * h * w);
  auto objective = [&] {
    const auto y = naive_conv(xv, cin, h, w, kv, bv, cout);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
    return s;
  };
  auto x = Tensor::from({cin, h, w}, xv, true);
  auto k = Tensor::from({cout, cin, 3, 3}, kv, true);
  auto b = Tensor::from({cout}, bv, true);
  ag::dot(ag::conv2d(x, k, b), c).backward();
  auto compare = [&](std::vector<double>& values, std::span<const double> grad) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + 1e-6;
      const double up = objective();
      values[i] = saved - 1e-6;
      const double down = objective();
      values[i] = saved;
      REQUIRE(grad[i] == Catch::Approx((up - down) / 2e-6).margin(1e-8));
    }
  };
  compare(xv, x.grad());
  compare(kv, k.grad());
  compare(bv, b.grad());
}

TEST_CASE("elementwise and resampling ops", "[autograd]") {
  SECTION("relu") {
    const auto y = ag::relu(Tensor::from({2}, {-1.0, 2.0}));
    CHECK(to_vec(y.value()) == std::vector<double>{0.0, 2.0});
  }
  SECTION("maxpool2 then upsample of a constant map is the constant") {
    const auto x = Tensor::from({2, 4, 6}, std::vector<double>(48, 3.5));
    const auto y = ag::upsample_nearest2(ag::maxpool2(x));
    CHECK(y.shape() == x.shape());
    for (double v : y.value()) CHECK(v == 3.5);
  }
  SECTION("maxpool2 picks the block maximum and routes its gradient; ties go to the first") {
    auto x = Tensor::from({1, 2, 4}, {1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 2.0}, true);
    auto y = ag::maxpool2(x);
    CHECK(to_vec(y.value()) == std::vector<double>{5.0, 2.0});
    ag::dot(y, {1.0, 10.0}).backward();
    CHECK(to_vec(x.grad()) == std::vector<double>{0, 1, 10, 0, 0, 0, 0, 0});
  }
  SECTION("odd dimensions are rejected") {
    CHECK_THROWS_AS(ag::maxpool2(Tensor::zeros({1, 3, 4})), OddDimension);
    CHECK_THROWS_AS(ag::maxpool2(Tensor::zeros({1, 4, 5})), OddDimension);
  }
  SECTION("sigmoid of zero is one half") {
    CHECK(ag::sigmoid(Tensor::zeros({1, 1, 1})).value()[0] == 0.5);
  }
  SECTION("gradients accumulate across uses of a shared input") {
    auto x = Tensor::from({2}, {1.0, -2.0}, true);
    ag::weighted_sum({{1.0, ag::dot(x, {1.0, 1.0})}, {2.0, ag::dot(x, {3.0, 0.0})}}).backward();
    CHECK(to_vec(x.grad()) == std::vector<double>{7.0, 1.0});
  }
}

TEST_CASE("Conv-MCD head shapes and counts", "[autograd][head]") {
  Rng rng(3);
  const int k = 32;
  const auto features = Tensor::from({k, 6, 6}, random_vec(rng, k * 36));
  for (auto [variant, contour, distance] :
       {std::tuple{HeadVariant::mcd, true, true}, std::tuple{HeadVariant::mc, true, false},
        std::tuple{HeadVariant::md, false, true}}) {
    ag::ConvMCDHead head(HeadConfig(k, variant), rng);
    const auto out = head.forward(features);
    CHECK(out.mask_logits.shape() == ag::Shape{2, 6, 6});
    CHECK(out.contour_logits.has_value() == contour);
    CHECK(out.distance_raw.has_value() == distance);
    if (contour) CHECK(out.contour_logits->shape() == ag::Shape{2, 6, 6});
    if (distance) CHECK(out.distance_raw->shape() == ag::Shape{1, 6, 6});
    CHECK(head.parameter_count() == HeadConfig(k, variant).parameter_count());
  }
  CHECK(ag::ConvMCDHead(HeadConfig(k), rng).parameter_count() == 1445);
  CHECK_THROWS_AS(ag::ConvMCDHead(HeadConfig(k), rng).forward(Tensor::zeros({16, 6, 6})), ShapeMismatch);

  SECTION("zero weights give uniform probabilities") {
    ag::ConvMCDHead head(HeadConfig(4), rng);
    for (auto& p : head.parameters()) {
      auto v = p.tensor.mutable_value();
      std::fill(v.begin(), v.end(), 0.0);
    }
    const auto out = head.forward(Tensor::from({4, 3, 3}, random_vec(rng, 36)));
    for (double v : softmax2(out.mask_logits.planes()).data) CHECK(v == 0.5);
    for (double v : sigmoid(out.distance_raw->planes()).data) CHECK(v == 0.5);
  }
}

TEST_CASE("differentiable loss equals the plain loss", "[autograd][loss]") {
  Rng rng(4);
  const auto targets = make_targets(oracle::random_blobs(rng, 6, 6, 2), DistanceMapKind::d2, ContourRadius::fixed(1));
  for (auto variant : {HeadVariant::mcd, HeadVariant::mc, HeadVariant::md}) {
    ag::ConvMCDHead head(HeadConfig(3, variant), rng);
    const auto pred = head.forward(Tensor::from({3, 6, 6}, random_vec(rng, 108)));
    const LossWeights w{0.9, 1.1, 0.6};
    const auto a = ag::total_loss(pred, targets, w, variant);
    const auto b = total_loss(pred.values(), targets, w, variant);
    CHECK(a.total.item() == b.total);
    CHECK(a.parts.mask == b.mask);
    CHECK(a.parts.contour == b.contour);
    CHECK(a.parts.distance == b.distance);
  }
}

TEST_CASE("gradient checker", "[autograd][gradcheck]") {
  const auto report = gradcheck_all(0);
  std::set<std::string> names;
  for (const auto& e : report.entries) {
    INFO(e.name << " max_rel_error=" << e.max_rel_error);
    CHECK(e.passed);
    CHECK(e.checked > 0);
    names.insert(e.name);
  }
  CHECK(report.passed());
  for (auto op : ag::kDifferentiableOps) CHECK(names.count(std::string(op)) == 1);
  CHECK(names.count("toynet_total_loss[mcd]") == 1);
  // Single ops and the head losses sit well inside the suite tolerance.
  for (const auto& e : report.entries) {
    if (!e.name.starts_with("toynet")) CHECK(e.max_rel_error < 1e-6);
  }

  SECTION("an injected backward fault is caught") {
    ag::testing::ScopedConvBackwardFault fault;
    const auto bad = gradcheck_all(0);
    CHECK_FALSE(bad.passed());
    for (const auto& e : bad.entries) {
      if (e.name == "conv2d") CHECK_FALSE(e.passed);
    }
  }
  CHECK_FALSE(ag::testing::corrupt_conv_backward);

  SECTION("relative error") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == 0.5);
    CHECK(relative_error(0.0, 1e-10) < 1e-5);  // below the floor, judged on scale 1e-4
  }
}

TEST_CASE("ToyNet", "[model]") {
  ag::ToyNet net(ag::ToyNetConfig{}, 7);
  ImageGrid<double> image(16, 12, 0.5);
  const auto out = net.forward(Tensor::from_grid(image));
  CHECK(out.mask_logits.shape() == ag::Shape{2, 12, 16});
  CHECK(out.contour_logits->shape() == ag::Shape{2, 12, 16});
  CHECK(out.distance_raw->shape() == ag::Shape{1, 12, 16});
  CHECK(net.parameter_count() == 80 + 584 + 1168 + 2320 + 1160 + 584 + HeadConfig(8).parameter_count());
  CHECK_THROWS_AS(net.forward(Tensor::from_grid(ImageGrid<double>(15, 12))), OddDimension);

  SECTION("same seed, same weights; the mask path does not depend on the variant") {
    CHECK(flat_parameters(ag::ToyNet(ag::ToyNetConfig{}, 7), false) == flat_parameters(net, false));
    ag::ToyNetConfig md;
    md.variant = HeadVariant::md;
    CHECK(flat_parameters(ag::ToyNet(md, 7), true) == flat_parameters(net, true));
  }
}

TEST_CASE("optimizers", "[model]") {
  auto x = Tensor::from({2}, {1.0, -1.0}, true);
  ag::Sgd sgd({x}, 0.5);
  ag::dot(x, {2.0, 4.0}).backward();
  sgd.step();
  CHECK(to_vec(x.value()) == std::vector<double>{0.0, -3.0});

  // Adam's first step moves each coordinate by about lr against the gradient sign.
  auto y = Tensor::from({2}, {0.0, 0.0}, true);
  ag::Adam adam({y}, 0.1);
  ag::dot(y, {3.0, -0.01}).backward();
  adam.step();
  CHECK(y.value()[0] == Catch::Approx(-0.1).epsilon(1e-6));
  CHECK(y.value()[1] == Catch::Approx(0.1).epsilon(1e-4));
}

TEST_CASE("training", "[train]") {
  const auto data = synthetic_dataset(2, 16, 5, DistanceMapKind::d2);
  TrainOptions opt;
  opt.epochs = 4;
  opt.lr = 1e-3;
  opt.seed = 3;

  SECTION("zero learning rate leaves parameters and loss unchanged") {
    auto frozen = opt;
    frozen.lr = 0.0;
    const auto r = train_toy(data, frozen);
    CHECK(flat_parameters(r.net, false) == flat_parameters(ag::ToyNet(ag::ToyNetConfig{}, 3), false));
    REQUIRE(r.trace.size() == 5);
    for (const auto& e : r.trace) CHECK(e.loss.total == r.trace[0].loss.total);
  }
  SECTION("deterministic at a fixed seed") {
    const auto a = train_toy(data, opt);
    const auto b = train_toy(data, opt);
    CHECK(flat_parameters(a.net, false) == flat_parameters(b.net, false));
    for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].loss.total == b.trace[i].loss.total);
  }
  SECTION("zero epochs gives only the initial evaluation") {
    auto none = opt;
    none.epochs = 0;
    const auto r = train_toy(data, none);
    REQUIRE(r.trace.size() == 1);
    CHECK(r.trace[0].epoch == 0);
    CHECK(r.trace[0].loss.total == evaluate_loss(r.net, data, opt.weights).total);
  }
  SECTION("weights (1,0,0) give the single-task mask trajectory for every variant") {
    auto mask_only = opt;
    mask_only.weights = {1.0, 0.0, 0.0};
    // Hand-written single-task loop: mask loss only, same init, same optimizer.
    ag::ToyNet reference(ag::ToyNetConfig{}, opt.seed);
    std::vector<Tensor> params;
    for (const auto& p : reference.parameters()) params.push_back(p.tensor);
    ag::Adam adam(params, opt.lr);
    std::vector<double> reference_trace;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
      double acc = 0.0;
      for (const auto& s : data) {
        const auto loss = ag::softmax_nll(reference.forward(Tensor::from_grid(s.image)).mask_logits, s.targets.mask);
        adam.zero_grad();
        loss.backward();
        adam.step();
        acc += 0.5 * loss.item();
      }
      reference_trace.push_back(acc);
    }
    for (auto variant : {HeadVariant::mcd, HeadVariant::mc, HeadVariant::md}) {
      mask_only.variant = variant;
      const auto r = train_toy(data, mask_only);
      CHECK(flat_parameters(r.net, true) == flat_parameters(reference, true));
      for (int e = 1; e <= opt.epochs; ++e) {
        CHECK(r.trace[e].loss.mask == reference_trace[e - 1]);
        CHECK(r.trace[e].loss.total == reference_trace[e - 1]);
      }
    }
  }
  SECTION("divergence is reported") {
    auto bad = opt;
    bad.lr = std::numeric_limits<double>::infinity();
    bad.optimizer = OptimizerKind::sgd;
    CHECK_THROWS_AS(train_toy(data, bad), DivergenceDetected);
  }
}

TEST_CASE("synthetic dataset", "[train]") {
  const auto a = synthetic_dataset(3, 32, 9, DistanceMapKind::d3);
  const auto b = synthetic_dataset(3, 32, 9, DistanceMapKind::d3);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].targets.mask == b[i].targets.mask);
    CHECK(a[i].targets.mask.any());
    for (std::size_t p = 0; p < a[i].image.size(); ++p) {
      REQUIRE(a[i].image[p] >= 0.15);
      REQUIRE(a[i].image[p] <= 0.85);
    }
  }
}
