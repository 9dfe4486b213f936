#include "pegrad/conv.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pegrad/errors.hpp"
#include "pegrad/random.hpp"
#include "pegrad/tensor.hpp"

using namespace pegrad;

TEST(ConvOutputExtent, SpecValues) {
  EXPECT_EQ(conv_output_extent(10, 3, 1, 1, 0), 8);
  EXPECT_EQ(conv_output_extent(10, 3, 2, 1, 0), 4);
  EXPECT_EQ(conv_output_extent(10, 3, 1, 2, 0), 6);
}

TEST(ConvOutputExtent, MatchesPlacementEnumeration) {
  // count start positions p = s*t with p + dl*(K-1) inside the padded extent
  for (std::int64_t t = 1; t <= 9; ++t) {
    for (std::int64_t k = 1; k <= 4; ++k) {
      for (std::int64_t s = 1; s <= 3; ++s) {
        for (std::int64_t dl = 1; dl <= 2; ++dl) {
          for (std::int64_t p = 0; p <= 2; ++p) {
            const std::int64_t padded = t + 2 * p;
            const std::int64_t span = dl * (k - 1) + 1;
            if (padded < span) {
              EXPECT_THROW(conv_output_extent(t, k, s, dl, p), GeometryError);
              continue;
            }
            std::int64_t count = 0;
            for (std::int64_t start = 0; start + span <= padded; start += s) {
              ++count;
            }
            EXPECT_EQ(conv_output_extent(t, k, s, dl, p), count)
                << "T=" << t << " K=" << k << " s=" << s << " dl=" << dl
                << " p=" << p;
          }
        }
      }
    }
  }
}

TEST(ConvOutputExtent, PreconditionViolation) {
  EXPECT_THROW(conv_output_extent(2, 3, 1, 1, 0), GeometryError);
  EXPECT_THROW(conv_output_extent(4, 3, 1, 2, 0), GeometryError);
}

TEST(ConvNd, HandExample1D) {
  Tensor x(Shape{1, 1, 4}, {1, 2, 3, 4});
  Tensor h(Shape{1, 1, 2}, {1, 1});
  ConvGeometry g{.in_channels = 1, .out_channels = 1, .kernel = {2}};
  Tensor y = conv_nd(x, h, g);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(y.values(), (std::vector<double>{3, 5, 7}));
}

TEST(ConvNd, IdentityKernel) {
  Rng rng(11);
  Tensor x = Tensor::randn(Shape{2, 1, 5}, rng);
  Tensor h(Shape{1, 1, 1}, {1});
  ConvGeometry g{.in_channels = 1, .out_channels = 1, .kernel = {1}};
  Tensor y = conv_nd(x, h, g);
  EXPECT_TRUE(y == x);
}

TEST(ConvNd, DepthwiseHandExample) {
  Tensor x(Shape{1, 2, 4}, {1, 2, 3, 4, 10, 20, 30, 40});
  Tensor h(Shape{2, 1, 2}, {1, 1, 1, 1});
  ConvGeometry g{
      .in_channels = 2, .out_channels = 2, .kernel = {2}, .groups = 2};
  Tensor y = conv_nd(x, h, g);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(y.values(), (std::vector<double>{3, 5, 7, 30, 50, 70}));
}

TEST(ConvNd, NoFlipConvention) {
  // kernel [1, 0] must select x[t], kernel [0, 1] must select x[t+1]
  Tensor x(Shape{1, 1, 3}, {5, 7, 9});
  Tensor h1(Shape{1, 1, 2}, {1, 0});
  Tensor h2(Shape{1, 1, 2}, {0, 1});
  ConvGeometry g{.in_channels = 1, .out_channels = 1, .kernel = {2}};
  EXPECT_EQ(conv_nd(x, h1, g).values(), (std::vector<double>{5, 7}));
  EXPECT_EQ(conv_nd(x, h2, g).values(), (std::vector<double>{7, 9}));
}

TEST(ConvNd, MatchesBruteForcePlainEq3) {
  Rng rng(21);
  for (std::int64_t b = 1; b <= 3; ++b) {
    for (std::int64_t c = 1; c <= 3; ++c) {
      for (std::int64_t d = 1; d <= 3; ++d) {
        for (std::int64_t t = 3; t <= 8; t += 2) {
          for (std::int64_t k = 1; k <= 3; ++k) {
            if (t < k) continue;
            Tensor x = Tensor::randn(Shape{b, c, t}, rng);
            Tensor h = Tensor::randn(Shape{d, c, k}, rng);
            ConvGeometry g{.in_channels = c, .out_channels = d, .kernel = {k}};
            EXPECT_LE(oracles::max_abs_diff(conv_nd(x, h, g),
                                            oracles::brute_conv(x, h, g)),
                      1e-12);
          }
        }
      }
    }
  }
}

TEST(ConvNd, MatchesBruteForceFullArgumentSweep1D) {
  Rng rng(22);
  const std::int64_t c = 4, d = 4, t = 12, k = 3;
  for (std::int64_t stride : {1, 2, 3}) {
    for (std::int64_t dil : {1, 2}) {
      for (std::int64_t pad : {0, 1, 2}) {
        for (std::int64_t groups : {1, 2, 4}) {
          Tensor x = Tensor::randn(Shape{2, c, t}, rng);
          Tensor h = Tensor::randn(Shape{d, c / groups, k}, rng);
          ConvGeometry g{.in_channels = c,
                         .out_channels = d,
                         .kernel = {k},
                         .stride = {stride},
                         .dilation = {dil},
                         .padding = {pad},
                         .groups = groups};
          EXPECT_LE(oracles::max_abs_diff(conv_nd(x, h, g),
                                          oracles::brute_conv(x, h, g)),
                    1e-12)
              << "stride=" << stride << " dil=" << dil << " pad=" << pad
              << " groups=" << groups;
        }
      }
    }
  }
}

TEST(ConvNd, MatchesBruteForceFullArgumentSweep2D) {
  Rng rng(23);
  const std::int64_t c = 4, d = 4, t = 9, k = 3;
  for (std::int64_t stride : {1, 2, 3}) {
    for (std::int64_t dil : {1, 2}) {
      for (std::int64_t pad : {0, 1, 2}) {
        for (std::int64_t groups : {1, 2, 4}) {
          Tensor x = Tensor::randn(Shape{2, c, t, t}, rng);
          Tensor h = Tensor::randn(Shape{d, c / groups, k, k}, rng);
          ConvGeometry g{.in_channels = c,
                         .out_channels = d,
                         .kernel = {k, k},
                         .stride = {stride, 1},
                         .dilation = {dil, dil},
                         .padding = {pad, pad},
                         .groups = groups};
          EXPECT_LE(oracles::max_abs_diff(conv_nd(x, h, g),
                                          oracles::brute_conv(x, h, g)),
                    1e-12);
        }
      }
    }
  }
}

TEST(ConvNd, MatchesBruteForce3D) {
  Rng rng(24);
  Tensor x = Tensor::randn(Shape{2, 2, 5, 4, 6}, rng);
  Tensor h = Tensor::randn(Shape{3, 2, 2, 1, 3}, rng);
  ConvGeometry g{.in_channels = 2,
                 .out_channels = 3,
                 .kernel = {2, 1, 3},
                 .stride = {2, 1, 1},
                 .dilation = {1, 2, 1},
                 .padding = {0, 1, 1}};
  EXPECT_LE(
      oracles::max_abs_diff(conv_nd(x, h, g), oracles::brute_conv(x, h, g)),
      1e-12);
}

TEST(ConvNd, Linearity) {
  Rng rng(25);
  Tensor x1 = Tensor::randn(Shape{2, 3, 7}, rng);
  Tensor x2 = Tensor::randn(Shape{2, 3, 7}, rng);
  Tensor h = Tensor::randn(Shape{2, 3, 3}, rng);
  ConvGeometry g{.in_channels = 3, .out_channels = 2, .kernel = {3}};
  const double alpha = 1.75, beta = -0.5;
  Tensor mix{x1.shape()};
  for (std::int64_t i = 0; i < mix.numel(); ++i) {
    mix.data()[i] = alpha * x1.data()[i] + beta * x2.data()[i];
  }
  Tensor lhs = conv_nd(mix, h, g);
  Tensor y1 = conv_nd(x1, h, g);
  Tensor y2 = conv_nd(x2, h, g);
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    EXPECT_NEAR(lhs.data()[i], alpha * y1.data()[i] + beta * y2.data()[i],
                1e-12);
  }
}

TEST(ConvNd, OutputExtentMatchesProducedLength) {
  Rng rng(26);
  for (std::int64_t stride : {1, 2, 3}) {
    for (std::int64_t dil : {1, 2}) {
      for (std::int64_t pad : {0, 1, 2}) {
        Tensor x = Tensor::randn(Shape{1, 2, 11}, rng);
        Tensor h = Tensor::randn(Shape{2, 2, 3}, rng);
        ConvGeometry g{.in_channels = 2,
                       .out_channels = 2,
                       .kernel = {3},
                       .stride = {stride},
                       .dilation = {dil},
                       .padding = {pad}};
        Tensor y = conv_nd(x, h, g);
        EXPECT_EQ(y.dim(2), conv_output_extent(11, 3, stride, dil, pad));
      }
    }
  }
}

TEST(ConvNd, ErrorsNameTheOffendingAxis) {
  Tensor x{Shape{1, 2, 4}};
  Tensor h{Shape{1, 2, 2}};
  // channel mismatch
  ConvGeometry bad_c{.in_channels = 3, .out_channels = 1, .kernel = {2}};
  try {
    conv_nd(x, h, bad_c);
    FAIL() << "expected GeometryError";
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
  // groups must divide channels
  ConvGeometry bad_g{
      .in_channels = 2, .out_channels = 1, .kernel = {2}, .groups = 2};
  EXPECT_THROW(conv_nd(x, h, bad_g), GeometryError);
  // output extent would be non-positive
  Tensor h_wide{Shape{1, 2, 5}};
  ConvGeometry bad_e{.in_channels = 2, .out_channels = 1, .kernel = {5}};
  EXPECT_THROW(conv_nd(x, h_wide, bad_e), GeometryError);
  // kernel tensor disagrees with geometry on a spatial axis
  ConvGeometry bad_k{.in_channels = 2, .out_channels = 1, .kernel = {3}};
  try {
    conv_nd(x, h, bad_k);
    FAIL() << "expected GeometryError";
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("axis"), std::string::npos);
  }
}

TEST(ConvNd, AllOutputsFiniteOnFiniteInputs) {
  Rng rng(27);
  Tensor x = Tensor::randn(Shape{3, 4, 8, 8}, rng);
  Tensor h = Tensor::randn(Shape{6, 2, 3, 3}, rng);
  ConvGeometry g{.in_channels = 4,
                 .out_channels = 6,
                 .kernel = {3, 3},
                 .stride = {2, 1},
                 .dilation = {1, 2},
                 .padding = {1, 1},
                 .groups = 2};
  Tensor y = conv_nd(x, h, g);
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}
