#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pegrad/conv.hpp"
#include "pegrad/errors.hpp"
#include "pegrad/layers.hpp"
#include "pegrad/tensor.hpp"

namespace pegrad {

// Per-example parameter gradients: one leading batch axis on every tensor.
// Summing over that axis reproduces the aggregate batch gradient.
struct PerExampleLayerGrads {
  std::size_t layer_index;
  Tensor weight;                // (B, ...weight shape)
  std::optional<Tensor> bias;   // (B, ...bias shape)
};

struct PerExampleGrads {
  std::int64_t batch_size = 0;
  std::vector<PerExampleLayerGrads> layers;

  AggregateGrads sum_over_batch() const {
    AggregateGrads agg;
    for (const PerExampleLayerGrads& lg : layers) {
      LayerGrad out{lg.layer_index, detail_sum(lg.weight), std::nullopt};
      if (lg.bias) out.bias = detail_sum(*lg.bias);
      agg.layers.push_back(std::move(out));
    }
    return agg;
  }

 private:
  static Tensor detail_sum(const Tensor& t) {
    std::vector<std::int64_t> dims(t.shape().dims().begin() + 1,
                                   t.shape().dims().end());
    Tensor out{Shape(dims)};
    const std::int64_t batch = t.dim(0);
    const std::int64_t per = out.numel();
    for (std::int64_t b = 0; b < batch; ++b) {
      const double* src = t.data() + b * per;
      for (std::int64_t i = 0; i < per; ++i) out.data()[i] += src[i];
    }
    return out;
  }
};

// Per-example dense weight gradient: out[b] = dy[b] (outer) x[b].
inline Tensor dense_per_example_grad(const Tensor& x, const Tensor& dy) {
  return batched_outer(dy, x);
}

// Per-example gradient of a convolution layer's kernel, computed with a
// single grouped convolution on reshaped tensors:
//
//   x  (B, C, spatial...)      -> (1, B*groups, C/groups, spatial...)
//   dy (B, D, out_spatial...)  -> (B*D, 1, 1, out_spatial...)
//
// The call uses one extra spatial axis (the channels-per-group axis),
// groups' = B*groups, padding' = (0, padding), and the layer's stride and
// dilation switched: stride' = (1, dilation), dilation' = (1, stride).
// The trailing spatial extents of the result can exceed the kernel extents
// when the forward pass used a stride; they are truncated back to K before
// the final reshape to (B, D, C/groups, K...).
inline Tensor conv_per_example_grad(const Tensor& x, const Tensor& dy,
                                    const ConvGeometry& geometry) {
  const ConvGeometry g = geometry.canonical();
  const std::size_t n = g.spatial_rank();
  if (n > 2) {
    throw GeometryError(
        "per-example conv gradients support 1 or 2 spatial axes (the grouped "
        "call needs one extra axis)");
  }
  if (x.rank() != n + 2) {
    throw GeometryError("input rank " + std::to_string(x.rank()) +
                        " does not match geometry with " + std::to_string(n) +
                        " spatial axes");
  }
  if (dy.rank() != n + 2 || dy.dim(0) != x.dim(0) ||
      dy.dim(1) != g.out_channels) {
    throw ShapeError("output gradient shape " + dy.shape().to_string() +
                     " does not match convolution output layout");
  }
  const std::int64_t batch = x.dim(0);
  const std::int64_t cpg = g.in_channels / g.groups;

  std::vector<std::int64_t> x_dims{1, batch * g.groups, cpg};
  for (std::size_t a = 0; a < n; ++a) x_dims.push_back(x.dim(2 + a));
  std::vector<std::int64_t> dy_dims{batch * g.out_channels, 1, 1};
  for (std::size_t a = 0; a < n; ++a) dy_dims.push_back(dy.dim(2 + a));

  ConvGeometry grouped;
  grouped.in_channels = batch * g.groups;
  grouped.out_channels = batch * g.out_channels;
  grouped.groups = batch * g.groups;
  grouped.kernel = {1};
  grouped.stride = {1};
  grouped.dilation = {1};
  grouped.padding = {0};
  for (std::size_t a = 0; a < n; ++a) {
    grouped.kernel.push_back(dy.dim(2 + a));
    grouped.stride.push_back(g.dilation[a]);
    grouped.dilation.push_back(g.stride[a]);
    grouped.padding.push_back(g.padding[a]);
  }

  const Tensor raw = conv_nd(x.reshaped(Shape(x_dims)),
                             dy.reshaped(Shape(dy_dims)), grouped);

  std::vector<std::int64_t> keep{cpg};
  keep.insert(keep.end(), g.kernel.begin(), g.kernel.end());
  Tensor trimmed = truncate_spatial(raw, keep);

  std::vector<std::int64_t> out_dims{batch, g.out_channels, cpg};
  out_dims.insert(out_dims.end(), g.kernel.begin(), g.kernel.end());
  return std::move(trimmed).reshaped(Shape(out_dims));
}

// Per-example gradient of a convolution bias: dy summed over spatial axes.
inline Tensor conv_per_example_bias_grad(const Tensor& dy) {
  const std::int64_t batch = dy.dim(0), d_dim = dy.dim(1);
  std::int64_t spatial = 1;
  for (std::size_t a = 2; a < dy.rank(); ++a) spatial *= dy.dim(a);
  Tensor grad{Shape{batch, d_dim}};
  const double* gp = dy.data();
  double* op = grad.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t d = 0; d < d_dim; ++d) {
      const double* row = gp + (b * d_dim + d) * spatial;
      double acc = 0.0;
      for (std::int64_t i = 0; i < spatial; ++i) acc += row[i];
      op[b * d_dim + d] = acc;
    }
  }
  return grad;
}

}  // namespace pegrad
