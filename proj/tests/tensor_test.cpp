#include "pegrad/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "pegrad/errors.hpp"

using namespace pegrad;

TEST(Shape, BasicsAndStrides) {
  Shape s{2, 3, 4};
  EXPECT_EQ(s.rank(), 3u);
  EXPECT_EQ(s.numel(), 24);
  EXPECT_EQ(s.strides(), (std::vector<std::int64_t>{12, 4, 1}));
  EXPECT_EQ(s.to_string(), "(2, 3, 4)");
  EXPECT_THROW(Shape({2, -1}), ShapeError);
}

TEST(Shape, ZeroExtentAllowed) {
  Shape s{2, 0, 3};
  EXPECT_EQ(s.numel(), 0);
  Tensor t{s};
  EXPECT_EQ(t.numel(), 0);
}

TEST(Tensor, ConstructionAndAccess) {
  Tensor t(Shape{2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.at({0, 0}), 1);
  EXPECT_EQ(t.at({1, 1}), 4);
  EXPECT_THROW(t.at({2, 0}), RangeError);
  EXPECT_THROW(Tensor(Shape{2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, ReshapePreservesBuffer) {
  Tensor t(Shape{1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped(Shape{2, 3});
  EXPECT_EQ(r.at({1, 2}), 6);
  EXPECT_THROW(t.reshaped(Shape{7}), ShapeError);
}

TEST(Tensor, RandnIsSeededAndFinite) {
  Rng r1(123), r2(123), r3(7);
  Tensor a = Tensor::randn(Shape{4, 5}, r1);
  Tensor b = Tensor::randn(Shape{4, 5}, r2);
  Tensor c = Tensor::randn(Shape{4, 5}, r3);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    EXPECT_TRUE(std::isfinite(a.data()[i]));
  }
}

TEST(PadSpatial, ZeroPadIsIdentity) {
  Tensor x(Shape{1, 2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(pad_spatial(x, {0}) == x);
}

TEST(PadSpatial, SingleElement) {
  Tensor x(Shape{1, 1, 1}, {1});
  Tensor p = pad_spatial(x, {1});
  EXPECT_EQ(p.shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(p.values(), (std::vector<double>{0, 1, 0}));
}

TEST(PadSpatial, WidthTwo) {
  Tensor x(Shape{1, 1, 2}, {1, 2});
  Tensor p = pad_spatial(x, {2});
  EXPECT_EQ(p.values(), (std::vector<double>{0, 0, 1, 2, 0, 0}));
}

TEST(PadSpatial, TwoAxes) {
  Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor p = pad_spatial(x, {1, 1});
  EXPECT_EQ(p.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(p.at({0, 0, 1, 1}), 1);
  EXPECT_EQ(p.at({0, 0, 2, 2}), 4);
  EXPECT_EQ(p.at({0, 0, 0, 0}), 0);
  EXPECT_EQ(p.at({0, 0, 3, 3}), 0);
  EXPECT_THROW(pad_spatial(x, {-1, 0}), RangeError);
}

TEST(PadSpatial, BatchAndChannelUntouched) {
  Rng rng(5);
  Tensor x = Tensor::randn(Shape{2, 3, 4}, rng);
  Tensor p = pad_spatial(x, {2});
  EXPECT_EQ(p.shape(), (Shape{2, 3, 8}));
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t t = 0; t < 4; ++t) {
        EXPECT_EQ(p.at({b, c, t + 2}), x.at({b, c, t}));
      }
    }
  }
}

TEST(TruncateSpatial, FullExtentIsIdentity) {
  Tensor x(Shape{1, 2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(truncate_spatial(x, {3}) == x);
}

TEST(TruncateSpatial, PrefixSlice) {
  Tensor x(Shape{1, 1, 3}, {6, 9, 4});
  Tensor t = truncate_spatial(x, {2});
  EXPECT_EQ(t.values(), (std::vector<double>{6, 9}));
}

TEST(TruncateSpatial, TwoAxes) {
  Tensor x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor t = truncate_spatial(x, {2, 1});
  EXPECT_EQ(t.shape(), (Shape{1, 1, 2, 1}));
  EXPECT_EQ(t.values(), (std::vector<double>{1, 4}));
}

TEST(TruncateSpatial, KeepBeyondExtentThrows) {
  Tensor x(Shape{1, 1, 3}, {1, 2, 3});
  EXPECT_THROW(truncate_spatial(x, {4}), RangeError);
}

TEST(PadTruncate, RoundTripProperty) {
  Rng rng(99);
  for (int it = 0; it < 20; ++it) {
    const std::int64_t b = 1 + static_cast<std::int64_t>(rng.next_u64() % 3);
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.next_u64() % 3);
    const std::int64_t t0 = 1 + static_cast<std::int64_t>(rng.next_u64() % 5);
    const std::int64_t t1 = 1 + static_cast<std::int64_t>(rng.next_u64() % 5);
    const std::int64_t p0 = static_cast<std::int64_t>(rng.next_u64() % 3);
    const std::int64_t p1 = static_cast<std::int64_t>(rng.next_u64() % 3);
    Tensor x = Tensor::randn(Shape{b, c, t0, t1}, rng);
    Tensor padded = pad_spatial(x, {p0, p1});
    // dropping the trailing pad then the leading pad recovers x
    Tensor lead = truncate_spatial(padded, {t0 + p0, t1 + p1});
    Tensor back{x.shape()};
    for (std::int64_t bb = 0; bb < b; ++bb)
      for (std::int64_t cc = 0; cc < c; ++cc)
        for (std::int64_t i = 0; i < t0; ++i)
          for (std::int64_t j = 0; j < t1; ++j)
            back.at({bb, cc, i, j}) = lead.at({bb, cc, i + p0, j + p1});
    EXPECT_TRUE(back == x);
  }
}

TEST(BatchedOuter, HandExample) {
  Tensor a(Shape{1, 1}, {3});
  Tensor b(Shape{1, 2}, {1, 2});
  Tensor out = batched_outer(a, b);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(out.values(), (std::vector<double>{3, 6}));
}

TEST(BatchedOuter, ZeroInput) {
  Tensor a{Shape{2, 3}};
  Rng rng(1);
  Tensor b = Tensor::randn(Shape{2, 4}, rng);
  Tensor out = batched_outer(a, b);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchedOuter, BatchIndependence) {
  Tensor a(Shape{2, 2}, {1, 2, 3, 4});
  Tensor b(Shape{2, 2}, {5, 6, 7, 8});
  Tensor out = batched_outer(a, b);
  // row 0 is the outer product of a[0] and b[0] alone
  EXPECT_EQ(out.at({0, 0, 0}), 5);
  EXPECT_EQ(out.at({0, 1, 1}), 12);
  EXPECT_EQ(out.at({1, 0, 0}), 21);
  EXPECT_EQ(out.at({1, 1, 1}), 32);
}

TEST(BatchedOuter, BatchMismatchThrows) {
  Tensor a{Shape{2, 2}};
  Tensor b{Shape{3, 2}};
  EXPECT_THROW(batched_outer(a, b), ShapeError);
}
