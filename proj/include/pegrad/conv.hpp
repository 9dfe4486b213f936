#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pegrad/errors.hpp"
#include "pegrad/tensor.hpp"

namespace pegrad {

namespace detail {

inline std::int64_t div_floor(std::int64_t a, std::int64_t b) {
  // b > 0
  const std::int64_t q = a / b;
  return (a % b != 0 && a < 0) ? q - 1 : q;
}

inline std::int64_t div_ceil(std::int64_t a, std::int64_t b) {
  return div_floor(a + b - 1, b);
}

}  // namespace detail

// Spatial/channel description of a grouped convolution: in/out channels,
// per-axis kernel extents, stride, dilation, zero padding, and group count.
// stride/dilation/padding may be left empty to mean 1/1/0 on every axis.
struct ConvGeometry {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::vector<std::int64_t> kernel;
  std::vector<std::int64_t> stride;
  std::vector<std::int64_t> dilation;
  std::vector<std::int64_t> padding;
  std::int64_t groups = 1;

  std::size_t spatial_rank() const { return kernel.size(); }

  // Validates invariants and fills defaulted stride/dilation/padding.
  ConvGeometry canonical() const {
    ConvGeometry g = *this;
    const std::size_t n = g.kernel.size();
    if (n < 1 || n > 3) {
      throw GeometryError("convolution supports 1 to 3 spatial axes, got " +
                          std::to_string(n));
    }
    if (g.stride.empty()) g.stride.assign(n, 1);
    if (g.dilation.empty()) g.dilation.assign(n, 1);
    if (g.padding.empty()) g.padding.assign(n, 0);
    if (g.stride.size() != n || g.dilation.size() != n || g.padding.size() != n) {
      throw GeometryError(
          "stride/dilation/padding must have one entry per spatial axis");
    }
    for (std::size_t a = 0; a < n; ++a) {
      if (g.kernel[a] < 1)
        throw GeometryError("kernel extent < 1 on spatial axis " +
                            std::to_string(a));
      if (g.stride[a] < 1)
        throw GeometryError("stride < 1 on spatial axis " + std::to_string(a));
      if (g.dilation[a] < 1)
        throw GeometryError("dilation < 1 on spatial axis " + std::to_string(a));
      if (g.padding[a] < 0)
        throw GeometryError("negative padding on spatial axis " +
                            std::to_string(a));
    }
    if (g.groups < 1) throw GeometryError("groups must be >= 1");
    if (g.in_channels < 1 || g.out_channels < 1) {
      throw GeometryError("channel counts must be >= 1");
    }
    if (g.in_channels % g.groups != 0) {
      throw GeometryError("groups " + std::to_string(g.groups) +
                          " does not divide in_channels " +
                          std::to_string(g.in_channels));
    }
    if (g.out_channels % g.groups != 0) {
      throw GeometryError("groups " + std::to_string(g.groups) +
                          " does not divide out_channels " +
                          std::to_string(g.out_channels));
    }
    return g;
  }

  // Kernel tensor shape (D, C/groups, K...).
  Shape kernel_shape() const {
    std::vector<std::int64_t> d{out_channels, in_channels / groups};
    d.insert(d.end(), kernel.begin(), kernel.end());
    return Shape(d);
  }
};

// Spatial output extent: floor((T + 2*pad - dilation*(K-1) - 1) / stride) + 1.
inline std::int64_t conv_output_extent(std::int64_t extent, std::int64_t kernel,
                                       std::int64_t stride = 1,
                                       std::int64_t dilation = 1,
                                       std::int64_t padding = 0) {
  if (kernel < 1 || stride < 1 || dilation < 1 || padding < 0) {
    throw GeometryError("invalid kernel/stride/dilation/padding");
  }
  const std::int64_t span = dilation * (kernel - 1) + 1;
  if (extent + 2 * padding < span) {
    throw GeometryError("padded extent " + std::to_string(extent + 2 * padding) +
                        " is smaller than effective kernel span " +
                        std::to_string(span));
  }
  return (extent + 2 * padding - span) / stride + 1;
}

namespace detail {

// Geometry normalized to exactly three spatial axes by prepending trivial
// axes (extent 1, kernel 1, stride/dilation 1, padding 0). Row-major layout
// makes the prepended axes free.
struct ConvPlan {
  std::int64_t batch, cin, cout, groups;
  std::int64_t cpg;  // input channels per group
  std::int64_t dpg;  // output channels per group
  std::int64_t t[3], k[3], s[3], dl[3], p[3], o[3];
};

inline ConvPlan make_conv_plan(const Shape& x_shape, const Shape& h_shape,
                               const ConvGeometry& g0) {
  const ConvGeometry g = g0.canonical();
  const std::size_t n = g.spatial_rank();
  if (x_shape.rank() != n + 2) {
    throw GeometryError("input rank " + std::to_string(x_shape.rank()) +
                        " does not match geometry with " + std::to_string(n) +
                        " spatial axes");
  }
  if (h_shape.rank() != n + 2) {
    throw GeometryError("kernel rank " + std::to_string(h_shape.rank()) +
                        " does not match geometry with " + std::to_string(n) +
                        " spatial axes");
  }
  if (x_shape[1] != g.in_channels) {
    throw GeometryError("input channel axis has extent " +
                        std::to_string(x_shape[1]) + ", geometry expects " +
                        std::to_string(g.in_channels));
  }
  if (h_shape[0] != g.out_channels) {
    throw GeometryError("kernel axis 0 has extent " + std::to_string(h_shape[0]) +
                        ", geometry expects " + std::to_string(g.out_channels));
  }
  if (h_shape[1] != g.in_channels / g.groups) {
    throw GeometryError("kernel axis 1 has extent " + std::to_string(h_shape[1]) +
                        ", geometry expects in_channels/groups = " +
                        std::to_string(g.in_channels / g.groups));
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (h_shape[2 + a] != g.kernel[a]) {
      throw GeometryError("kernel spatial axis " + std::to_string(a) +
                          " has extent " + std::to_string(h_shape[2 + a]) +
                          ", geometry expects " + std::to_string(g.kernel[a]));
    }
  }

  ConvPlan plan{};
  plan.batch = x_shape[0];
  plan.cin = g.in_channels;
  plan.cout = g.out_channels;
  plan.groups = g.groups;
  plan.cpg = g.in_channels / g.groups;
  plan.dpg = g.out_channels / g.groups;
  const std::size_t lead = 3 - n;
  for (std::size_t a = 0; a < 3; ++a) {
    plan.t[a] = 1;
    plan.k[a] = 1;
    plan.s[a] = 1;
    plan.dl[a] = 1;
    plan.p[a] = 0;
    plan.o[a] = 1;
  }
  for (std::size_t a = 0; a < n; ++a) {
    plan.t[lead + a] = x_shape[2 + a];
    plan.k[lead + a] = g.kernel[a];
    plan.s[lead + a] = g.stride[a];
    plan.dl[lead + a] = g.dilation[a];
    plan.p[lead + a] = g.padding[a];
  }
  for (std::size_t a = 0; a < 3; ++a) {
    try {
      plan.o[a] =
          conv_output_extent(plan.t[a], plan.k[a], plan.s[a], plan.dl[a], plan.p[a]);
    } catch (const GeometryError&) {
      throw GeometryError(
          "non-positive output extent on spatial axis " +
          std::to_string(a - lead) + ": input " + std::to_string(plan.t[a]) +
          ", kernel " + std::to_string(plan.k[a]) + ", stride " +
          std::to_string(plan.s[a]) + ", dilation " + std::to_string(plan.dl[a]) +
          ", padding " + std::to_string(plan.p[a]));
    }
  }
  return plan;
}

// Valid kernel index range on one axis for output position t: all k with
// 0 <= s*t + dl*k - p < extent.
inline void kernel_range(std::int64_t t, std::int64_t s, std::int64_t dl,
                         std::int64_t p, std::int64_t extent, std::int64_t kmax,
                         std::int64_t& klo, std::int64_t& khi) {
  const std::int64_t base = s * t - p;
  klo = base >= 0 ? 0 : div_ceil(-base, dl);
  khi = div_floor(extent - 1 - base, dl);
  if (khi >= kmax) khi = kmax - 1;
}

// Core grouped-convolution kernel over a plan. Each output element is a
// single sequential reduction (channel-in-group outer, kernel axes inner),
// so results do not depend on how callers partition work.
inline void conv_nd_exec(const ConvPlan& pl, const double* x, const double* h,
                         double* y) {
  const std::int64_t xs2 = 1, xs1 = pl.t[2], xs0 = pl.t[1] * pl.t[2];
  const std::int64_t x_ch = pl.t[0] * xs0;
  const std::int64_t x_b = pl.cin * x_ch;
  const std::int64_t hs2 = 1, hs1 = pl.k[2], hs0 = pl.k[1] * pl.k[2];
  const std::int64_t h_ch = pl.k[0] * hs0;
  const std::int64_t h_d = pl.cpg * h_ch;

  double* out = y;
  for (std::int64_t b = 0; b < pl.batch; ++b) {
    for (std::int64_t d = 0; d < pl.cout; ++d) {
      const std::int64_t group = d / pl.dpg;
      const double* xg = x + b * x_b + group * pl.cpg * x_ch;
      const double* hd = h + d * h_d;
      for (std::int64_t t0 = 0; t0 < pl.o[0]; ++t0) {
        std::int64_t klo0, khi0;
        kernel_range(t0, pl.s[0], pl.dl[0], pl.p[0], pl.t[0], pl.k[0], klo0, khi0);
        const std::int64_t base0 = pl.s[0] * t0 - pl.p[0];
        for (std::int64_t t1 = 0; t1 < pl.o[1]; ++t1) {
          std::int64_t klo1, khi1;
          kernel_range(t1, pl.s[1], pl.dl[1], pl.p[1], pl.t[1], pl.k[1], klo1,
                       khi1);
          const std::int64_t base1 = pl.s[1] * t1 - pl.p[1];
          for (std::int64_t t2 = 0; t2 < pl.o[2]; ++t2) {
            std::int64_t klo2, khi2;
            kernel_range(t2, pl.s[2], pl.dl[2], pl.p[2], pl.t[2], pl.k[2], klo2,
                         khi2);
            const std::int64_t base2 = pl.s[2] * t2 - pl.p[2];
            double acc = 0.0;
            for (std::int64_t c = 0; c < pl.cpg; ++c) {
              const double* xc = xg + c * x_ch;
              const double* hc = hd + c * h_ch;
              for (std::int64_t k0 = klo0; k0 <= khi0; ++k0) {
                const double* xp0 = xc + (base0 + pl.dl[0] * k0) * xs0;
                const double* hp0 = hc + k0 * hs0;
                for (std::int64_t k1 = klo1; k1 <= khi1; ++k1) {
                  const double* xp1 = xp0 + (base1 + pl.dl[1] * k1) * xs1;
                  const double* hp1 = hp0 + k1 * hs1;
                  if (pl.dl[2] == 1) {
                    const double* xp2 = xp1 + base2 + klo2;
                    const double* hp2 = hp1 + klo2;
                    const std::int64_t len = khi2 - klo2 + 1;
                    for (std::int64_t k2 = 0; k2 < len; ++k2) {
                      acc += xp2[k2 * xs2] * hp2[k2 * hs2];
                    }
                  } else {
                    for (std::int64_t k2 = klo2; k2 <= khi2; ++k2) {
                      acc += xp1[base2 + pl.dl[2] * k2] * hp1[k2];
                    }
                  }
                }
              }
            }
            *out++ = acc;
          }
        }
      }
    }
  }
}

}  // namespace detail

// Grouped N-D convolution (1 to 3 spatial axes), correlation convention
// (offset +k, no kernel flip):
//
//   y[b, d, t] = sum_{c in d's group} sum_k x_pad[b, c, s*t + dl*k] * h[d, c, k]
//
// x is (B, C, spatial...), h is (D, C/groups, K...), output is
// (B, D, out_spatial...). Deterministic: every output element is reduced in a
// fixed order regardless of internal work partitioning.
inline Tensor conv_nd(const Tensor& x, const Tensor& h, const ConvGeometry& g) {
  const detail::ConvPlan plan = detail::make_conv_plan(x.shape(), h.shape(), g);
  const std::size_t n = g.spatial_rank();
  std::vector<std::int64_t> out_dims{plan.batch, plan.cout};
  for (std::size_t a = 3 - n; a < 3; ++a) out_dims.push_back(plan.o[a]);
  Tensor y{Shape(out_dims)};
  detail::conv_nd_exec(plan, x.data(), h.data(), y.data());
  return y;
}

}  // namespace pegrad
