#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pegrad/errors.hpp"
#include "pegrad/random.hpp"

namespace pegrad {

// Ordered list of axis extents. Axis order convention throughout the library
// is (batch, channels, spatial...).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) {
    validate();
  }

  std::size_t rank() const { return dims_.size(); }
  std::int64_t operator[](std::size_t axis) const { return dims_[axis]; }
  const std::vector<std::int64_t>& dims() const { return dims_; }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims_) n *= d;
    return n;
  }

  // Row-major strides; stride of the last axis is 1.
  std::vector<std::int64_t> strides() const {
    std::vector<std::int64_t> s(dims_.size(), 1);
    for (std::size_t i = dims_.size(); i-- > 1;) {
      s[i - 1] = s[i] * dims_[i];
    }
    return s;
  }

  std::string to_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) os << ", ";
      os << dims_[i];
    }
    os << ')';
    return os.str();
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.dims_ == b.dims_;
  }
  friend bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }

 private:
  void validate() const {
    for (std::int64_t d : dims_) {
      if (d < 0) {
        throw ShapeError("shape " + to_string() + " has a negative extent");
      }
    }
  }

  std::vector<std::int64_t> dims_;
};

// Dense N-dimensional array of doubles in row-major order. A Tensor is a
// plain value: copies are deep and instances are never mutated by library
// operations once handed out.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(shape_.numel()), 0.0) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_.numel()) {
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.to_string());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = value;
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.gaussian();
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::int64_t dim(std::size_t axis) const { return shape_[axis]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  // Bounds-checked element access; intended for tests and small code paths.
  double& at(std::initializer_list<std::int64_t> idx) {
    return data_[checked_offset(idx)];
  }
  double at(std::initializer_list<std::int64_t> idx) const {
    return data_[checked_offset(idx)];
  }

  // Same flat buffer under a different shape. Row-major reinterpretation;
  // the element count must be preserved.
  Tensor reshaped(Shape shape) const& {
    check_reshape(shape);
    return Tensor(std::move(shape), data_);
  }
  Tensor reshaped(Shape shape) && {
    check_reshape(shape);
    return Tensor(std::move(shape), std::move(data_));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }
  friend bool operator!=(const Tensor& a, const Tensor& b) {
    return !(a == b);
  }

 private:
  std::size_t checked_offset(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.rank()) {
      throw RangeError("index rank " + std::to_string(idx.size()) +
                       " does not match tensor rank " +
                       std::to_string(shape_.rank()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::int64_t i : idx) {
      if (i < 0 || i >= shape_[axis]) {
        throw RangeError("index " + std::to_string(i) + " out of range for axis " +
                         std::to_string(axis) + " of shape " + shape_.to_string());
      }
      off = off * static_cast<std::size_t>(shape_[axis]) +
            static_cast<std::size_t>(i);
      ++axis;
    }
    return off;
  }

  void check_reshape(const Shape& shape) const {
    if (shape.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + shape_.to_string() + " to " +
                       shape.to_string() + ": element counts differ");
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

// Splits (batch, channels, spatial...) into the leading extent product and
// the spatial extents. Throws if the tensor has no spatial axes.
inline void split_spatial(const Tensor& x, std::int64_t& lead,
                          std::vector<std::int64_t>& spatial) {
  if (x.rank() < 3) {
    throw ShapeError("expected a (batch, channels, spatial...) tensor, got " +
                     x.shape().to_string());
  }
  lead = x.dim(0) * x.dim(1);
  spatial.assign(x.shape().dims().begin() + 2, x.shape().dims().end());
}

}  // namespace detail

namespace detail {

// Copies the leading keep[a] sub-box of src into dst at offset dst_origin[a]
// per spatial axis, one (lead, spatial...) plane at a time. Shared by
// pad_spatial (origin = pad) and truncate_spatial (origin = 0).
inline void copy_spatial_box(const double* src,
                             const std::vector<std::int64_t>& src_spatial,
                             double* dst,
                             const std::vector<std::int64_t>& dst_spatial,
                             const std::vector<std::int64_t>& box,
                             const std::vector<std::int64_t>& dst_origin,
                             std::int64_t lead) {
  const std::size_t n = box.size();
  std::int64_t box_rows = 1;  // rows = all box axes except the last
  for (std::size_t a = 0; a + 1 < n; ++a) box_rows *= box[a];
  const std::int64_t row_len = box[n - 1];
  if (box_rows == 0 || row_len == 0) return;

  std::vector<std::int64_t> src_strides(n, 1), dst_strides(n, 1);
  for (std::size_t a = n; a-- > 1;) {
    src_strides[a - 1] = src_strides[a] * src_spatial[a];
    dst_strides[a - 1] = dst_strides[a] * dst_spatial[a];
  }
  const std::int64_t src_plane = src_strides[0] * src_spatial[0];
  const std::int64_t dst_plane = dst_strides[0] * dst_spatial[0];

  std::vector<std::int64_t> idx(n, 0);
  for (std::int64_t l = 0; l < lead; ++l) {
    std::fill(idx.begin(), idx.end(), 0);
    for (std::int64_t row = 0; row < box_rows; ++row) {
      std::int64_t src_off = l * src_plane;
      std::int64_t dst_off = l * dst_plane + dst_origin[n - 1];
      for (std::size_t a = 0; a + 1 < n; ++a) {
        src_off += idx[a] * src_strides[a];
        dst_off += (idx[a] + dst_origin[a]) * dst_strides[a];
      }
      std::copy(src + src_off, src + src_off + row_len, dst + dst_off);
      for (std::size_t a = n - 1; a-- > 0;) {
        if (++idx[a] < box[a]) break;
        idx[a] = 0;
      }
    }
  }
}

}  // namespace detail

// Zero-fills a border of width pad[a] on both sides of each spatial axis.
// Batch and channel axes are untouched.
inline Tensor pad_spatial(const Tensor& x, const std::vector<std::int64_t>& pad) {
  std::int64_t lead = 0;
  std::vector<std::int64_t> spatial;
  detail::split_spatial(x, lead, spatial);
  if (pad.size() != spatial.size()) {
    throw ShapeError("padding has " + std::to_string(pad.size()) +
                     " entries for " + std::to_string(spatial.size()) +
                     " spatial axes");
  }
  for (std::size_t a = 0; a < pad.size(); ++a) {
    if (pad[a] < 0) {
      throw RangeError("negative padding on spatial axis " + std::to_string(a));
    }
  }

  std::vector<std::int64_t> out_dims(x.shape().dims());
  for (std::size_t a = 0; a < pad.size(); ++a) out_dims[2 + a] += 2 * pad[a];
  Tensor out{Shape(out_dims)};

  std::vector<std::int64_t> out_spatial(out_dims.begin() + 2, out_dims.end());
  detail::copy_spatial_box(x.data(), spatial, out.data(), out_spatial, spatial,
                           pad, lead);
  return out;
}

// Keeps the first keep[a] indices on each spatial axis.
inline Tensor truncate_spatial(const Tensor& x,
                               const std::vector<std::int64_t>& keep) {
  std::int64_t lead = 0;
  std::vector<std::int64_t> spatial;
  detail::split_spatial(x, lead, spatial);
  if (keep.size() != spatial.size()) {
    throw ShapeError("keep has " + std::to_string(keep.size()) +
                     " entries for " + std::to_string(spatial.size()) +
                     " spatial axes");
  }
  for (std::size_t a = 0; a < keep.size(); ++a) {
    if (keep[a] < 0 || keep[a] > spatial[a]) {
      throw RangeError("keep " + std::to_string(keep[a]) +
                       " exceeds extent " + std::to_string(spatial[a]) +
                       " on spatial axis " + std::to_string(a));
    }
  }

  std::vector<std::int64_t> out_dims(x.shape().dims());
  for (std::size_t a = 0; a < keep.size(); ++a) out_dims[2 + a] = keep[a];
  Tensor out{Shape(out_dims)};

  const std::vector<std::int64_t> origin(keep.size(), 0);
  detail::copy_spatial_box(x.data(), spatial, out.data(), keep, keep, origin,
                           lead);
  return out;
}

// Copy of example b as a batch-1 tensor.
inline Tensor slice_example(const Tensor& x, std::int64_t b) {
  if (x.rank() < 1 || b < 0 || b >= x.dim(0)) {
    throw RangeError("example index " + std::to_string(b) +
                     " out of range for shape " + x.shape().to_string());
  }
  std::vector<std::int64_t> dims = x.shape().dims();
  dims[0] = 1;
  const std::int64_t per = x.numel() / x.dim(0);
  std::vector<double> data(x.data() + b * per, x.data() + (b + 1) * per);
  return Tensor(Shape(dims), std::move(data));
}

// out[b, j, i] = a[b, j] * b[b, i].
inline Tensor batched_outer(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("batched_outer expects rank-2 tensors, got " +
                     a.shape().to_string() + " and " + b.shape().to_string());
  }
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("batched_outer batch extents differ: " +
                     std::to_string(a.dim(0)) + " vs " +
                     std::to_string(b.dim(0)));
  }
  const std::int64_t batch = a.dim(0), j_dim = a.dim(1), i_dim = b.dim(1);
  Tensor out{Shape{batch, j_dim, i_dim}};
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t j = 0; j < j_dim; ++j) {
      const double aj = ap[n * j_dim + j];
      const double* brow = bp + n * i_dim;
      for (std::int64_t i = 0; i < i_dim; ++i) *op++ = aj * brow[i];
    }
  }
  return out;
}

}  // namespace pegrad
