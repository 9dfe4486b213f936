#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pegrad/conv.hpp"
#include "pegrad/errors.hpp"
#include "pegrad/tensor.hpp"

namespace pegrad {

// ---------------------------------------------------------------------------
// Layer kinds
// ---------------------------------------------------------------------------

struct ConvLayer {
  ConvGeometry geometry;
  Tensor kernel;                // (D, C/groups, K...)
  std::optional<Tensor> bias;   // (D)
};

struct DenseLayer {
  Tensor weight;                // (J, I)
  std::optional<Tensor> bias;   // (J)
};

struct ReluLayer {};

struct MaxPoolLayer {
  std::int64_t window = 2;   // applied to every spatial axis
  std::int64_t stride = 2;
};

struct FlattenLayer {};

using Layer =
    std::variant<ConvLayer, DenseLayer, ReluLayer, MaxPoolLayer, FlattenLayer>;

inline bool is_parameterized(const Layer& layer) {
  return std::holds_alternative<ConvLayer>(layer) ||
         std::holds_alternative<DenseLayer>(layer);
}

inline const char* layer_kind_name(const Layer& layer) {
  if (std::holds_alternative<ConvLayer>(layer)) return "conv";
  if (std::holds_alternative<DenseLayer>(layer)) return "dense";
  if (std::holds_alternative<ReluLayer>(layer)) return "relu";
  if (std::holds_alternative<MaxPoolLayer>(layer)) return "maxpool";
  return "flatten";
}

// Ordered sequence of layers. Shapes are checked as a pass runs; a mismatch
// raises a ShapeError naming the layer index.
class Network {
 public:
  std::vector<Layer> layers;

  Network& add_conv(ConvGeometry geometry, Tensor kernel,
                    std::optional<Tensor> bias = std::nullopt) {
    const ConvGeometry g = geometry.canonical();
    if (kernel.shape() != g.kernel_shape()) {
      throw ShapeError("conv kernel shape " + kernel.shape().to_string() +
                       " does not match geometry shape " +
                       g.kernel_shape().to_string());
    }
    if (bias && bias->shape() != Shape{g.out_channels}) {
      throw ShapeError("conv bias shape " + bias->shape().to_string() +
                       " does not match out_channels " +
                       std::to_string(g.out_channels));
    }
    layers.push_back(ConvLayer{g, std::move(kernel), std::move(bias)});
    return *this;
  }

  Network& add_dense(Tensor weight, std::optional<Tensor> bias = std::nullopt) {
    if (weight.rank() != 2) {
      throw ShapeError("dense weight must be rank 2, got " +
                       weight.shape().to_string());
    }
    if (bias && bias->shape() != Shape{weight.dim(0)}) {
      throw ShapeError("dense bias shape " + bias->shape().to_string() +
                       " does not match output extent " +
                       std::to_string(weight.dim(0)));
    }
    layers.push_back(DenseLayer{std::move(weight), std::move(bias)});
    return *this;
  }

  Network& add_relu() {
    layers.emplace_back(ReluLayer{});
    return *this;
  }

  Network& add_maxpool(std::int64_t window, std::int64_t stride) {
    if (window < 1 || stride < 1) {
      throw ConfigError("maxpool window and stride must be >= 1");
    }
    layers.push_back(MaxPoolLayer{window, stride});
    return *this;
  }

  Network& add_flatten() {
    layers.emplace_back(FlattenLayer{});
    return *this;
  }

  std::size_t parameterized_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += is_parameterized(l) ? 1 : 0;
    return n;
  }
};

// Mutable reference to one parameter tensor, in the fixed traversal order
// (layers ascending, weight before bias).
struct ParamRef {
  std::size_t layer_index;
  bool is_bias;
  Tensor* tensor;
};

inline std::vector<ParamRef> parameter_refs(Network& net) {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (auto* c = std::get_if<ConvLayer>(&net.layers[i])) {
      refs.push_back({i, false, &c->kernel});
      if (c->bias) refs.push_back({i, true, &*c->bias});
    } else if (auto* d = std::get_if<DenseLayer>(&net.layers[i])) {
      refs.push_back({i, false, &d->weight});
      if (d->bias) refs.push_back({i, true, &*d->bias});
    }
  }
  return refs;
}

inline std::size_t parameter_count(const Network& net) {
  std::size_t n = 0;
  auto& mutable_net = const_cast<Network&>(net);
  for (const ParamRef& r : parameter_refs(mutable_net)) {
    n += static_cast<std::size_t>(r.tensor->numel());
  }
  return n;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace stats {

inline std::atomic<std::uint64_t> forward_passes{0};

inline std::uint64_t forward_pass_count() {
  return forward_passes.load(std::memory_order_relaxed);
}
inline void reset_forward_pass_count() {
  forward_passes.store(0, std::memory_order_relaxed);
}

}  // namespace stats

// Every layer input captured by a forward pass, plus argmax positions for
// max-pool layers (flat indices into that layer's input, one per output
// element in row-major order).
struct ForwardCache {
  std::vector<Tensor> inputs;
  std::vector<std::vector<std::int64_t>> pool_argmax;
};

struct ForwardResult {
  Tensor activations;
  ForwardCache cache;
};

namespace detail {

inline Tensor relu_forward(const Tensor& x) {
  Tensor y{x.shape()};
  const double* src = x.data();
  double* dst = y.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  }
  return y;
}

inline Tensor maxpool_forward(const MaxPoolLayer& pool, const Tensor& x,
                              std::vector<std::int64_t>& argmax) {
  if (x.rank() < 3 || x.rank() > 5) {
    throw ShapeError("maxpool expects (batch, channels, 1-3 spatial axes), got " +
                     x.shape().to_string());
  }
  const std::size_t n = x.rank() - 2;
  std::int64_t t[3] = {1, 1, 1}, o[3] = {1, 1, 1};
  std::int64_t w[3] = {1, 1, 1}, s[3] = {1, 1, 1};
  for (std::size_t a = 0; a < n; ++a) {
    t[3 - n + a] = x.dim(2 + a);
    w[3 - n + a] = pool.window;
    s[3 - n + a] = pool.stride;
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (t[a] < w[a]) {
      throw ShapeError("maxpool window " + std::to_string(w[a]) +
                       " exceeds extent " + std::to_string(t[a]) +
                       " on spatial axis " + std::to_string(a - (3 - n)));
    }
    o[a] = (t[a] - w[a]) / s[a] + 1;
  }

  std::vector<std::int64_t> out_dims{x.dim(0), x.dim(1)};
  for (std::size_t a = 3 - n; a < 3; ++a) out_dims.push_back(o[a]);
  Tensor y{Shape(out_dims)};
  argmax.assign(static_cast<std::size_t>(y.numel()), 0);

  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t in_plane = t[0] * t[1] * t[2];
  const double* src = x.data();
  double* dst = y.data();
  std::int64_t* amax = argmax.data();
  std::int64_t out_pos = 0;
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const double* base = src + pl * in_plane;
    for (std::int64_t t0 = 0; t0 < o[0]; ++t0) {
      for (std::int64_t t1 = 0; t1 < o[1]; ++t1) {
        for (std::int64_t t2 = 0; t2 < o[2]; ++t2) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t k0 = 0; k0 < w[0]; ++k0) {
            for (std::int64_t k1 = 0; k1 < w[1]; ++k1) {
              for (std::int64_t k2 = 0; k2 < w[2]; ++k2) {
                const std::int64_t idx = ((s[0] * t0 + k0) * t[1] +
                                          (s[1] * t1 + k1)) * t[2] +
                                         (s[2] * t2 + k2);
                const double v = base[idx];
                // ties break toward the lowest flat index
                if (v > best) {
                  best = v;
                  best_idx = idx;
                }
              }
            }
          }
          dst[out_pos] = best;
          amax[out_pos] = pl * in_plane + best_idx;
          ++out_pos;
        }
      }
    }
  }
  return y;
}

inline Tensor dense_forward(const DenseLayer& dense, const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError("dense expects a flattened (batch, features) input, got " +
                     x.shape().to_string());
  }
  const std::int64_t j_dim = dense.weight.dim(0);
  const std::int64_t i_dim = dense.weight.dim(1);
  if (x.dim(1) != i_dim) {
    throw ShapeError("dense input extent " + std::to_string(x.dim(1)) +
                     " does not match weight columns " + std::to_string(i_dim));
  }
  Tensor y{Shape{x.dim(0), j_dim}};
  const double* xp = x.data();
  const double* wp = dense.weight.data();
  double* yp = y.data();
  for (std::int64_t b = 0; b < x.dim(0); ++b) {
    const double* xr = xp + b * i_dim;
    for (std::int64_t j = 0; j < j_dim; ++j) {
      const double* wr = wp + j * i_dim;
      double acc = dense.bias ? dense.bias->data()[j] : 0.0;
      for (std::int64_t i = 0; i < i_dim; ++i) acc += wr[i] * xr[i];
      yp[b * j_dim + j] = acc;
    }
  }
  return y;
}

inline Tensor conv_forward(const ConvLayer& conv, const Tensor& x) {
  Tensor y = conv_nd(x, conv.kernel, conv.geometry);
  if (conv.bias) {
    const std::int64_t d_dim = y.dim(1);
    std::int64_t spatial = 1;
    for (std::size_t a = 2; a < y.rank(); ++a) spatial *= y.dim(a);
    double* yp = y.data();
    const double* bp = conv.bias->data();
    for (std::int64_t b = 0; b < y.dim(0); ++b) {
      for (std::int64_t d = 0; d < d_dim; ++d) {
        double* row = yp + (b * d_dim + d) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) row[i] += bp[d];
      }
    }
  }
  return y;
}

inline Tensor flatten_forward(const Tensor& x) {
  if (x.rank() < 2) {
    throw ShapeError("flatten expects a batched tensor, got " +
                     x.shape().to_string());
  }
  std::int64_t rest = 1;
  for (std::size_t a = 1; a < x.rank(); ++a) rest *= x.dim(a);
  return x.reshaped(Shape{x.dim(0), rest});
}

inline Tensor apply_layer(const Layer& layer, const Tensor& x,
                          std::vector<std::int64_t>& argmax) {
  if (const auto* c = std::get_if<ConvLayer>(&layer)) return conv_forward(*c, x);
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return dense_forward(*d, x);
  if (std::holds_alternative<ReluLayer>(layer)) return relu_forward(x);
  if (const auto* p = std::get_if<MaxPoolLayer>(&layer)) {
    return maxpool_forward(*p, x, argmax);
  }
  return flatten_forward(x);
}

}  // namespace detail

// Runs the network on a batch, capturing every layer input for backward use.
inline ForwardResult forward(const Network& net, const Tensor& x) {
  stats::forward_passes.fetch_add(1, std::memory_order_relaxed);
  ForwardCache cache;
  cache.inputs.reserve(net.layers.size());
  cache.pool_argmax.resize(net.layers.size());
  Tensor current = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    cache.inputs.push_back(std::move(current));
    try {
      current = detail::apply_layer(net.layers[i], cache.inputs[i],
                                    cache.pool_argmax[i]);
    } catch (const Error& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" +
                       layer_kind_name(net.layers[i]) + "): " + e.what());
    }
  }
  return ForwardResult{std::move(current), std::move(cache)};
}

// ---------------------------------------------------------------------------
// Loss: L[b] = 1/2 * sum(output[b]^2), so dL/d(output) = output.
// ---------------------------------------------------------------------------

inline Tensor per_example_loss(const Tensor& output) {
  const std::int64_t batch = output.rank() ? output.dim(0) : 0;
  Tensor loss{Shape{batch}};
  if (batch == 0) return loss;
  const std::int64_t per = output.numel() / batch;
  const double* op = output.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < per; ++i) {
      const double v = op[b * per + i];
      acc += v * v;
    }
    loss.data()[b] = 0.5 * acc;
  }
  return loss;
}

inline Tensor per_example_loss_grad(const Tensor& output) { return output; }

// ---------------------------------------------------------------------------
// Backward pass: input gradients
// ---------------------------------------------------------------------------

namespace detail {

// Gather-form transposed convolution: for each input position, sum the
// kernel taps that touched it. (k, t) pairs are precomputed per axis.
inline Tensor conv_backward_input(const ConvLayer& conv, const Tensor& x,
                                  const Tensor& dy) {
  const ConvPlan pl = make_conv_plan(x.shape(), conv.kernel.shape(), conv.geometry);
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t lead = 3 - conv.geometry.spatial_rank();
    if (a >= lead) {
      const std::int64_t expect = pl.o[a];
      const std::int64_t got = dy.dim(2 + a - lead);
      if (got != expect) {
        throw ShapeError("output gradient extent " + std::to_string(got) +
                         " on spatial axis " + std::to_string(a - lead) +
                         " does not match expected " + std::to_string(expect));
      }
    }
  }
  if (dy.dim(0) != pl.batch || dy.dim(1) != pl.cout) {
    throw ShapeError("output gradient shape " + dy.shape().to_string() +
                     " does not match convolution output");
  }

  // valid (kernel index, output index) pairs per axis and input position
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> taps[3];
  for (std::size_t a = 0; a < 3; ++a) {
    taps[a].resize(static_cast<std::size_t>(pl.t[a]));
    for (std::int64_t q = 0; q < pl.t[a]; ++q) {
      for (std::int64_t k = 0; k < pl.k[a]; ++k) {
        const std::int64_t num = q + pl.p[a] - pl.dl[a] * k;
        if (num < 0 || num % pl.s[a] != 0) continue;
        const std::int64_t t = num / pl.s[a];
        if (t >= pl.o[a]) continue;
        taps[a][static_cast<std::size_t>(q)].emplace_back(k, t);
      }
    }
  }

  Tensor dx{x.shape()};
  const double* hp = conv.kernel.data();
  const double* gp = dy.data();
  double* op = dx.data();

  const std::int64_t in_plane = pl.t[0] * pl.t[1] * pl.t[2];
  const std::int64_t out_plane = pl.o[0] * pl.o[1] * pl.o[2];
  const std::int64_t h_ch = pl.k[0] * pl.k[1] * pl.k[2];
  const std::int64_t h_d = pl.cpg * h_ch;

  std::int64_t pos = 0;
  for (std::int64_t b = 0; b < pl.batch; ++b) {
    for (std::int64_t c = 0; c < pl.cin; ++c) {
      const std::int64_t group = c / pl.cpg;
      const std::int64_t cl = c % pl.cpg;
      const std::int64_t d0 = group * pl.dpg;
      for (std::int64_t q0 = 0; q0 < pl.t[0]; ++q0) {
        for (std::int64_t q1 = 0; q1 < pl.t[1]; ++q1) {
          for (std::int64_t q2 = 0; q2 < pl.t[2]; ++q2) {
            double acc = 0.0;
            for (const auto& [k0, t0] : taps[0][q0]) {
              for (const auto& [k1, t1] : taps[1][q1]) {
                for (const auto& [k2, t2] : taps[2][q2]) {
                  const std::int64_t koff =
                      cl * h_ch + (k0 * pl.k[1] + k1) * pl.k[2] + k2;
                  const std::int64_t toff = (t0 * pl.o[1] + t1) * pl.o[2] + t2;
                  for (std::int64_t d = d0; d < d0 + pl.dpg; ++d) {
                    acc += hp[d * h_d + koff] *
                           gp[(b * pl.cout + d) * out_plane + toff];
                  }
                }
              }
            }
            op[pos++] = acc;
          }
        }
      }
    }
  }
  return dx;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  if (x.shape() != dy.shape()) {
    throw ShapeError("relu gradient shape " + dy.shape().to_string() +
                     " does not match input shape " + x.shape().to_string());
  }
  Tensor dx{x.shape()};
  const double* xp = x.data();
  const double* gp = dy.data();
  double* op = dx.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    op[i] = xp[i] > 0.0 ? gp[i] : 0.0;
  }
  return dx;
}

inline Tensor maxpool_backward(const Tensor& x,
                               const std::vector<std::int64_t>& argmax,
                               const Tensor& dy) {
  if (static_cast<std::int64_t>(argmax.size()) != dy.numel()) {
    throw ShapeError("maxpool argmax cache does not match gradient size");
  }
  Tensor dx{x.shape()};
  const double* gp = dy.data();
  double* op = dx.data();
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    op[argmax[i]] += gp[i];
  }
  return dx;
}

inline Tensor dense_backward_input(const DenseLayer& dense, const Tensor& dy) {
  const std::int64_t j_dim = dense.weight.dim(0);
  const std::int64_t i_dim = dense.weight.dim(1);
  if (dy.rank() != 2 || dy.dim(1) != j_dim) {
    throw ShapeError("dense gradient shape " + dy.shape().to_string() +
                     " does not match weight rows " + std::to_string(j_dim));
  }
  Tensor dx{Shape{dy.dim(0), i_dim}};
  const double* wp = dense.weight.data();
  const double* gp = dy.data();
  double* op = dx.data();
  for (std::int64_t b = 0; b < dy.dim(0); ++b) {
    const double* gr = gp + b * j_dim;
    double* xr = op + b * i_dim;
    for (std::int64_t j = 0; j < j_dim; ++j) {
      const double gj = gr[j];
      const double* wr = wp + j * i_dim;
      for (std::int64_t i = 0; i < i_dim; ++i) xr[i] += gj * wr[i];
    }
  }
  return dx;
}

}  // namespace detail

// Gradient of the loss w.r.t. the input of layer `index`, given the gradient
// dy w.r.t. that layer's output.
inline Tensor backward_input(const Network& net, const ForwardCache& cache,
                             std::size_t index, const Tensor& dy) {
  if (index >= net.layers.size()) {
    throw RangeError("layer index " + std::to_string(index) + " out of range");
  }
  const Layer& layer = net.layers[index];
  const Tensor& input = cache.inputs[index];
  if (const auto* c = std::get_if<ConvLayer>(&layer)) {
    return detail::conv_backward_input(*c, input, dy);
  }
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    return detail::dense_backward_input(*d, dy);
  }
  if (std::holds_alternative<ReluLayer>(layer)) {
    return detail::relu_backward(input, dy);
  }
  if (std::holds_alternative<MaxPoolLayer>(layer)) {
    return detail::maxpool_backward(input, cache.pool_argmax[index], dy);
  }
  return dy.reshaped(input.shape());
}

// ---------------------------------------------------------------------------
// Aggregate (summed over batch) parameter gradients
// ---------------------------------------------------------------------------

struct LayerGrad {
  std::size_t layer_index;
  Tensor weight;
  std::optional<Tensor> bias;
};

struct AggregateGrads {
  std::vector<LayerGrad> layers;
};

namespace detail {

// Direct summed weight gradient for a convolution layer:
//   dh[d, c, k] = sum_b sum_t x_pad[b, c, s*t + dl*k] * dy[b, d, t]
// This is the conventional batched path; it deliberately does not route
// through the grouped-convolution per-example kernel.
inline Tensor conv_aggregate_weight_grad(const Tensor& x, const Tensor& dy,
                                         const ConvGeometry& geometry) {
  const ConvPlan pl = make_conv_plan(x.shape(), geometry.kernel_shape(), geometry);
  Tensor grad{geometry.kernel_shape()};

  const std::int64_t in_plane = pl.t[0] * pl.t[1] * pl.t[2];
  const std::int64_t out_plane = pl.o[0] * pl.o[1] * pl.o[2];

  // valid output range per axis for a given kernel index
  auto t_range = [&](std::size_t a, std::int64_t k, std::int64_t& lo,
                     std::int64_t& hi) {
    const std::int64_t shift = pl.p[a] - pl.dl[a] * k;
    lo = shift > 0 ? div_ceil(shift, pl.s[a]) : 0;
    hi = div_floor(pl.t[a] - 1 + shift, pl.s[a]);
    if (hi >= pl.o[a]) hi = pl.o[a] - 1;
  };

  const double* xp = x.data();
  const double* gp = dy.data();
  double* out = grad.data();
  std::int64_t pos = 0;
  for (std::int64_t d = 0; d < pl.cout; ++d) {
    const std::int64_t group = d / pl.dpg;
    for (std::int64_t cl = 0; cl < pl.cpg; ++cl) {
      const std::int64_t c = group * pl.cpg + cl;
      for (std::int64_t k0 = 0; k0 < pl.k[0]; ++k0) {
        std::int64_t lo0, hi0;
        t_range(0, k0, lo0, hi0);
        for (std::int64_t k1 = 0; k1 < pl.k[1]; ++k1) {
          std::int64_t lo1, hi1;
          t_range(1, k1, lo1, hi1);
          for (std::int64_t k2 = 0; k2 < pl.k[2]; ++k2) {
            std::int64_t lo2, hi2;
            t_range(2, k2, lo2, hi2);
            double acc = 0.0;
            for (std::int64_t b = 0; b < pl.batch; ++b) {
              const double* xc = xp + (b * pl.cin + c) * in_plane;
              const double* gr = gp + (b * pl.cout + d) * out_plane;
              for (std::int64_t t0 = lo0; t0 <= hi0; ++t0) {
                const std::int64_t p0 = pl.s[0] * t0 + pl.dl[0] * k0 - pl.p[0];
                for (std::int64_t t1 = lo1; t1 <= hi1; ++t1) {
                  const std::int64_t p1 = pl.s[1] * t1 + pl.dl[1] * k1 - pl.p[1];
                  const std::int64_t rowbase = (p0 * pl.t[1] + p1) * pl.t[2] +
                                               pl.dl[2] * k2 - pl.p[2];
                  const double* grow = gr + (t0 * pl.o[1] + t1) * pl.o[2];
                  for (std::int64_t t2 = lo2; t2 <= hi2; ++t2) {
                    acc += xc[rowbase + pl.s[2] * t2] * grow[t2];
                  }
                }
              }
            }
            out[pos++] = acc;
          }
        }
      }
    }
  }
  return grad;
}

// Gradient w.r.t. a conv bias: sum of dy over batch and spatial axes.
inline Tensor conv_aggregate_bias_grad(const Tensor& dy) {
  const std::int64_t batch = dy.dim(0), d_dim = dy.dim(1);
  std::int64_t spatial = 1;
  for (std::size_t a = 2; a < dy.rank(); ++a) spatial *= dy.dim(a);
  Tensor grad{Shape{d_dim}};
  const double* gp = dy.data();
  for (std::int64_t d = 0; d < d_dim; ++d) {
    double acc = 0.0;
    for (std::int64_t b = 0; b < batch; ++b) {
      const double* row = gp + (b * d_dim + d) * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) acc += row[i];
    }
    grad.data()[d] = acc;
  }
  return grad;
}

}  // namespace detail

// Conventional batched reverse pass: propagates dy through the network and
// accumulates parameter gradients summed over the batch. The input gradient
// of layer 0 is not materialized (nothing consumes it).
inline AggregateGrads aggregate_backward(const Network& net,
                                         const ForwardCache& cache,
                                         const Tensor& delta_out) {
  AggregateGrads grads;
  Tensor dy = delta_out;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const Layer& layer = net.layers[i];
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      LayerGrad lg{i,
                   detail::conv_aggregate_weight_grad(cache.inputs[i], dy,
                                                      c->geometry),
                   std::nullopt};
      if (c->bias) lg.bias = detail::conv_aggregate_bias_grad(dy);
      grads.layers.push_back(std::move(lg));
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      const Tensor& x = cache.inputs[i];
      const std::int64_t j_dim = d->weight.dim(0), i_dim = d->weight.dim(1);
      Tensor w{Shape{j_dim, i_dim}};
      for (std::int64_t b = 0; b < x.dim(0); ++b) {
        const double* gr = dy.data() + b * j_dim;
        const double* xr = x.data() + b * i_dim;
        for (std::int64_t j = 0; j < j_dim; ++j) {
          double* wr = w.data() + j * i_dim;
          const double gj = gr[j];
          for (std::int64_t ii = 0; ii < i_dim; ++ii) wr[ii] += gj * xr[ii];
        }
      }
      LayerGrad lg{i, std::move(w), std::nullopt};
      if (d->bias) {
        Tensor bg{Shape{j_dim}};
        for (std::int64_t b = 0; b < x.dim(0); ++b) {
          for (std::int64_t j = 0; j < j_dim; ++j) {
            bg.data()[j] += dy.data()[b * j_dim + j];
          }
        }
        lg.bias = std::move(bg);
      }
      grads.layers.push_back(std::move(lg));
    }
    if (i > 0) dy = backward_input(net, cache, i, dy);
  }
  std::reverse(grads.layers.begin(), grads.layers.end());
  return grads;
}

}  // namespace pegrad
