#pragma once

// Minimal reverse-mode automatic differentiation over double-precision
// tensors: just enough operators to build a small encoder-decoder with a
// Conv-MCD head and train it on the multi-task loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "convmcd/error.hpp"
#include "convmcd/loss.hpp"
#include "convmcd/raster.hpp"
#include "convmcd/targets.hpp"

namespace convmcd::ag {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // adds this node's grad into its inputs

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw ShapeMismatch("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                          shape_string(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_planes(const Planes& p, bool requires_grad = false) {
    return from({p.channels, p.height, p.width}, p.data, requires_grad);
  }

  static Tensor from_grid(const ImageGrid<double>& g) {
    return from({1, g.height(), g.width()}, std::vector<double>(g.values().begin(), g.values().end()));
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }

  // Gradient after backward(); empty span if nothing flowed here.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  double item() const {
    if (size() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  Planes planes() const {
    if (shape().size() != 3) throw ShapeMismatch("planes() needs a [C,H,W] tensor");
    Planes p;
    p.channels = dim(0);
    p.height = dim(1);
    p.width = dim(2);
    p.data = node_->value;
    return p;
  }

  /// Reverse pass from a scalar; gradients accumulate into every reachable
  /// tensor that requires them.
  void backward() const {
    if (size() != 1) throw ShapeMismatch("backward() needs a scalar root");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }

private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  template <typename Backward>
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>, Backward&&);

  std::shared_ptr<Node> node_;
};

template <typename Backward>
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs, Backward&& backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (auto& t : inputs) {
    node->requires_grad = node->requires_grad || t.requires_grad();
    node->inputs.push_back(t.shared());
  }
  if (node->requires_grad) node->backward = std::forward<Backward>(backward);
  return Tensor(std::move(node));
}

namespace testing {
// Fault injection for negative-control tests of the gradient checker.
inline thread_local bool corrupt_conv_backward = false;

class ScopedConvBackwardFault {
public:
  ScopedConvBackwardFault() : previous_(corrupt_conv_backward) { corrupt_conv_backward = true; }
  ~ScopedConvBackwardFault() { corrupt_conv_backward = previous_; }
  ScopedConvBackwardFault(const ScopedConvBackwardFault&) = delete;
  ScopedConvBackwardFault& operator=(const ScopedConvBackwardFault&) = delete;

private:
  bool previous_;
};
}  // namespace testing

namespace detail {
inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.shape().size() != rank) {
    throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_string(t.shape()));
  }
}

inline std::vector<double>& grad_of(const std::shared_ptr<Node>& n) {
  n->ensure_grad();
  return n->grad;
}
}  // namespace detail

/// 3x3 cross-correlation, stride 1, zero padding 1.
/// x: [Cin,H,W], kernel: [Cout,Cin,3,3], bias: [Cout] -> [Cout,H,W].
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  detail::require_rank(x, 3, "conv2d input");
  detail::require_rank(kernel, 4, "conv2d kernel");
  detail::require_rank(bias, 1, "conv2d bias");
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cout = kernel.dim(0);
  if (kernel.dim(1) != cin || kernel.dim(2) != 3 || kernel.dim(3) != 3 || bias.dim(0) != cout) {
    throw ShapeMismatch("conv2d: input " + shape_string(x.shape()) + ", kernel " + shape_string(kernel.shape()) +
                        ", bias " + shape_string(bias.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> out(static_cast<std::size_t>(cout) * plane);
  const auto xv = x.value();
  const auto kv = kernel.value();
  const auto bv = bias.value();

  // Visits every (output row/col range, input offset) pair of the padded 3x3 window.
  auto for_each_tap = [h, w](auto&& fn) {
    for (int ky = 0; ky < 3; ++ky) {
      const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
      for (int kx = 0; kx < 3; ++kx) {
        const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
        fn(ky, kx, y0, y1, x0, x1);
      }
    }
  };

  for (int co = 0; co < cout; ++co) {
    double* o = out.data() + co * plane;
    std::fill(o, o + plane, bv[co]);
    for (int ci = 0; ci < cin; ++ci) {
      const double* in = xv.data() + ci * plane;
      const double* k = kv.data() + (static_cast<std::size_t>(co) * cin + ci) * 9;
      for_each_tap([&](int ky, int kx, int y0, int y1, int x0, int x1) {
        const double kw = k[ky * 3 + kx];
        for (int y = y0; y < y1; ++y) {
          double* orow = o + static_cast<std::size_t>(y) * w;
          const double* irow = in + static_cast<std::size_t>(y + ky - 1) * w + (kx - 1);
          for (int xx = x0; xx < x1; ++xx) orow[xx] += kw * irow[xx];
        }
      });
    }
  }

  auto xs = x.shared(), ks = kernel.shared(), bs = bias.shared();
  return make_result({cout, h, w}, std::move(out), {x, kernel, bias},
                     [=](Node& self) {
                       const auto& g = self.grad;
                       if (bs->requires_grad) {
                         auto& gb = detail::grad_of(bs);
                         for (int co = 0; co < cout; ++co) {
                           const double* go = g.data() + co * plane;
                           double acc = 0.0;
                           for (std::size_t i = 0; i < plane; ++i) acc += go[i];
                           gb[co] += acc;
                         }
                       }
                       std::vector<double>* gk = ks->requires_grad ? &detail::grad_of(ks) : nullptr;
                       std::vector<double>* gx = xs->requires_grad ? &detail::grad_of(xs) : nullptr;
                       for (int co = 0; co < cout; ++co) {
                         const double* go = g.data() + co * plane;
                         for (int ci = 0; ci < cin; ++ci) {
                           const std::size_t kbase = (static_cast<std::size_t>(co) * cin + ci) * 9;
                           const double* in = xs->value.data() + ci * plane;
                           for_each_tap([&](int ky, int kx, int y0, int y1, int x0, int x1) {
                             const double kw = ks->value[kbase + ky * 3 + kx];
                             double acc = 0.0;
                             for (int y = y0; y < y1; ++y) {
                               const double* grow = go + static_cast<std::size_t>(y) * w;
                               const std::size_t off = static_cast<std::size_t>(y + ky - 1) * w + (kx - 1);
                               const double* irow = in + off;
                               if (gk) {
                                 for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
                               }
                               if (gx) {
                                 double* gxrow = gx->data() + ci * plane + off;
                                 for (int xx = x0; xx < x1; ++xx) gxrow[xx] += kw * grow[xx];
                               }
                             }
                             if (gk) (*gk)[kbase + ky * 3 + kx] += acc;
                           });
                         }
                       }
                       if (gk && testing::corrupt_conv_backward) {
                         for (auto& v : *gk) v *= 1.01;
                       }
                     });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.value().begin(), x.value().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto xs = x.shared();
  return make_result(x.shape(), std::move(out), {x}, [xs](Node& self) {
    auto& gx = detail::grad_of(xs);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xs->value[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

/// 2x2 max pooling with stride 2. Ties go to the first element in scan order.
inline Tensor maxpool2(const Tensor& x) {
  detail::require_rank(x, 3, "maxpool2");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw OddDimension("maxpool2 needs even height and width, got " + shape_string(x.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto xv = x.value();
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx, ++o) {
        const std::size_t base = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (xv[cand[k]] > xv[best]) best = cand[k];
        }
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  auto xs = x.shared();
  return make_result({c, oh, ow}, std::move(out), {x}, [xs, argmax = std::move(argmax)](Node& self) {
    auto& gx = detail::grad_of(xs);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
  });
}

/// Nearest-neighbour 2x upsampling.
inline Tensor upsample_nearest2(const Tensor& x) {
  detail::require_rank(x, 3, "upsample_nearest2");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = 2 * h, ow = 2 * w;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const auto xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        out[(static_cast<std::size_t>(ch) * oh + y) * ow + xx] =
            xv[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
      }
    }
  }
  auto xs = x.shared();
  return make_result({c, oh, ow}, std::move(out), {x}, [=](Node& self) {
    auto& gx = detail::grad_of(xs);
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          gx[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
              self.grad[(static_cast<std::size_t>(ch) * oh + y) * ow + xx];
        }
      }
    }
  });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.value().begin(), x.value().end());
  for (double& v : out) v = convmcd::sigmoid(v);
  auto xs = x.shared();
  auto result = make_result(x.shape(), std::move(out), {x}, [xs](Node& self) {
    auto& gx = detail::grad_of(xs);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = self.value[i];
      gx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
  return result;
}

/// Channel softmax followed by the clamped pixel-mean NLL of the labelled
/// class. Same value as nll_loss(softmax2(logits), labels).
inline Tensor softmax_nll(const Tensor& logits, const BinaryMask& labels) {
  detail::require_rank(logits, 3, "softmax_nll");
  const Planes probs = softmax2(logits.planes());
  const double loss = nll_loss(probs, labels);
  auto ls = logits.shared();
  return make_result({1}, {loss}, {logits}, [ls, probs, labels](Node& self) {
    auto& gl = detail::grad_of(ls);
    const std::size_t n = probs.plane_size();
    const std::size_t cs = static_cast<std::size_t>(probs.channels);
    const double scale = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = labels[i] ? 1 : 0;
      if (probs.data[y * n + i] <= kLogClamp) continue;  // clamp active: flat
      for (std::size_t c = 0; c < cs; ++c) {
        const double p = probs.data[c * n + i];
        gl[c * n + i] += scale * (p - (c == y ? 1.0 : 0.0));
      }
    }
  });
}

/// Pixel-mean squared error against a normalized distance map.
inline Tensor mse(const Tensor& pred, const DistanceMap& target) {
  detail::require_rank(pred, 3, "mse");
  const double loss = mse_loss(pred.planes(), target);
  auto ps = pred.shared();
  return make_result({1}, {loss}, {pred}, [ps, t = target.grid](Node& self) {
    auto& gp = detail::grad_of(ps);
    const double scale = 2.0 * self.grad[0] / static_cast<double>(gp.size());
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += scale * (ps->value[i] - t[i]);
  });
}

/// sum_i weight_i * term_i over scalar terms, accumulated left to right.
inline Tensor weighted_sum(const std::vector<std::pair<double, Tensor>>& terms) {
  if (terms.empty()) throw InvalidArgument("weighted_sum needs at least one term");
  double total = terms[0].first * terms[0].second.item();
  for (std::size_t i = 1; i < terms.size(); ++i) total += terms[i].first * terms[i].second.item();
  std::vector<Tensor> inputs;
  std::vector<double> weights;
  for (const auto& [wgt, t] : terms) {
    inputs.push_back(t);
    weights.push_back(wgt);
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (auto& t : inputs) nodes.push_back(t.shared());
  return make_result({1}, {total}, inputs, [nodes, weights](Node& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      detail::grad_of(nodes[i])[0] += weights[i] * self.grad[0];
    }
  });
}

/// <x, coeffs>: reduces any tensor to a scalar with fixed coefficients.
inline Tensor dot(const Tensor& x, std::vector<double> coeffs) {
  if (coeffs.size() != x.size()) throw ShapeMismatch("dot: coefficient count does not match tensor size");
  double acc = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) acc += coeffs[i] * x.value()[i];
  auto xs = x.shared();
  return make_result({1}, {acc}, {x}, [xs, coeffs = std::move(coeffs)](Node& self) {
    auto& gx = detail::grad_of(xs);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += coeffs[i] * self.grad[0];
  });
}

/// Names of every differentiable operator above; the gradient checker covers each once.
inline constexpr std::string_view kDifferentiableOps[] = {
    "conv2d", "relu", "maxpool2", "upsample_nearest2", "sigmoid", "softmax_nll", "mse", "weighted_sum", "dot",
};

}  // namespace convmcd::ag
