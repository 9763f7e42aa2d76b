#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nerv360/memory.hpp"

namespace nerv360 {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowArray = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  Index pixels() const { return height * width; }
  Index size() const { return channels * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " +
         std::to_string(s.width) + ")";
}

// Dense (C, H, W) feature map. Storage is channel-major, so `mat()` views the
// tensor as a C x (H*W) row-major matrix: per-channel ops are row ops and 1x1
// convolutions are plain matrix products. Storage goes through the tracking
// allocator so peak activation memory is observable.
template <typename Scalar>
class Tensor {
 public:
  using Storage = std::vector<Scalar, memory::TrackingAllocator<Scalar>>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(shape) {
    if (shape.channels < 0 || shape.height < 0 || shape.width < 0) {
      throw ShapeError("negative tensor dimension " + to_string(shape));
    }
    data_.assign(static_cast<std::size_t>(shape.size()), fill);
  }
  Tensor(Index channels, Index height, Index width, Scalar fill = Scalar(0))
      : Tensor(Shape{channels, height, width}, fill) {}

  const Shape& shape() const { return shape_; }
  Index channels() const { return shape_.channels; }
  Index height() const { return shape_.height; }
  Index width() const { return shape_.width; }
  Index pixels() const { return shape_.pixels(); }
  Index size() const { return shape_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(Index c, Index y, Index x) { return data_[index(c, y, x)]; }
  Scalar operator()(Index c, Index y, Index x) const { return data_[index(c, y, x)]; }

  MatrixMap mat() { return MatrixMap(data(), shape_.channels, shape_.pixels()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data(), shape_.channels, shape_.pixels()); }

  // One channel as an H x W row-major matrix.
  MatrixMap channel(Index c) {
    return MatrixMap(data() + c * shape_.pixels(), shape_.height, shape_.width);
  }
  ConstMatrixMap channel(Index c) const {
    return ConstMatrixMap(data() + c * shape_.pixels(), shape_.height, shape_.width);
  }

  ArrayMap array() { return ArrayMap(data(), size()); }
  ConstArrayMap array() const { return ConstArrayMap(data(), size()); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.array() = array().template cast<Other>();
    return out;
  }

  void release() {
    Storage().swap(data_);
    shape_ = {};
  }

 private:
  std::size_t index(Index c, Index y, Index x) const {
    return static_cast<std::size_t>((c * shape_.height + y) * shape_.width + x);
  }

  Shape shape_;
  Storage data_;
};

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected " + to_string(expected) + ", got " +
                     to_string(t.shape()));
  }
}

}  // namespace nerv360
