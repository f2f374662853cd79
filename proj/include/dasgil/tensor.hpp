#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstring>
#include <string>

#include "dasgil/error.hpp"

namespace dasgil {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// NCHW extents. Vectors and scalars are carried as (n, c, 1, 1) and (1, 1, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  Eigen::Index size() const { return Eigen::Index(n) * c * h * w; }
  Eigen::Index per_sample() const { return Eigen::Index(c) * h * w; }
  Eigen::Index plane() const { return Eigen::Index(h) * w; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

// Dense NCHW tensor; storage is a contiguous column vector.
template <typename Scalar>
struct Tensor {
  Shape shape;
  Vec<Scalar> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(Vec<Scalar>::Zero(s.size())) {}
  Tensor(Shape s, Vec<Scalar> d) : shape(s), data(std::move(d)) {
    require(data.size() == shape.size(), ErrorCode::ShapeMismatch,
            "tensor data length does not match shape " + shape.str());
  }

  static Tensor scalar(Scalar v) {
    Tensor t(Shape{1, 1, 1, 1});
    t.data[0] = v;
    return t;
  }

  Scalar* sample_ptr(int n) { return data.data() + n * shape.per_sample(); }
  const Scalar* sample_ptr(int n) const { return data.data() + n * shape.per_sample(); }

  // Sample n viewed as a (channels x pixels) row-major matrix.
  Eigen::Map<RowMat<Scalar>> sample(int n) {
    return {sample_ptr(n), shape.c, static_cast<Eigen::Index>(shape.plane())};
  }
  Eigen::Map<const RowMat<Scalar>> sample(int n) const {
    return {sample_ptr(n), shape.c, static_cast<Eigen::Index>(shape.plane())};
  }

  Scalar& at(int n, int c, int y, int x) {
    return data[((Eigen::Index(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }
  Scalar at(int n, int c, int y, int x) const {
    return data[((Eigen::Index(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape, data.template cast<Other>());
  }

  bool all_finite() const { return data.allFinite(); }
};

}  // namespace dasgil

namespace dasgil {

// Same shape and identical bytes (so NaN payloads and signed zeros count).
template <typename Scalar>
bool bit_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), sizeof(Scalar) * static_cast<std::size_t>(a.data.size())) == 0;
}

}  // namespace dasgil
