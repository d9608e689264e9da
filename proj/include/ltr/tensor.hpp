// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense NCHW tensor, parameter views and the error types shared by
 *         every module of the toolkit.
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ltr {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Raised when activations or losses stop being finite.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed configuration, bad arguments or incompatible files.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t n = 0, c = 0, h = 1, w = 1;

  std::size_t sample_size() const { return c * h * w; }
  std::size_t positions() const { return h * w; }
  std::size_t numel() const { return n * c * h * w; }
  bool operator==(const Shape &) const = default;
};

inline std::string to_string(const Shape &s) {
  return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + "]";
}

/**
 * Batch of feature maps in NCHW order. Vectors are stored as C x 1 x 1 maps so
 * the same type carries MLP activations and convolutional feature maps.
 */
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw std::invalid_argument("tensor data size does not match shape " +
                                  to_string(shape_));
  }

  static Tensor from_matrix(const Matrix &m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), 1, 1});
    MatrixMap(t.data(), m.rows(), m.cols()) = m;
    return t;
  }

  const Shape &shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  double *data() { return data_.data(); }
  const double *data() const { return data_.data(); }
  std::vector<double> &vec() { return data_; }
  const std::vector<double> &vec() const { return data_; }

  std::span<double> sample(std::size_t i) {
    return {data_.data() + i * shape_.sample_size(), shape_.sample_size()};
  }
  std::span<const double> sample(std::size_t i) const {
    return {data_.data() + i * shape_.sample_size(), shape_.sample_size()};
  }

  double &at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  /// Rows are samples, columns the flattened C*H*W features.
  MatrixMap as_matrix() {
    return {data_.data(), static_cast<Eigen::Index>(shape_.n),
            static_cast<Eigen::Index>(shape_.sample_size())};
  }
  ConstMatrixMap as_matrix() const {
    return {data_.data(), static_cast<Eigen::Index>(shape_.n),
            static_cast<Eigen::Index>(shape_.sample_size())};
  }

  /// Copies rows [first, first + count) into a new tensor.
  Tensor rows(std::size_t first, std::size_t count) const {
    Shape s = shape_;
    s.n = count;
    Tensor out(s);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * s.sample_size()),
                count * s.sample_size(), out.data_.begin());
    return out;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v))
        return false;
    return true;
  }

  Tensor &operator+=(const Tensor &o) {
    if (!(o.shape_ == shape_))
      throw std::invalid_argument("tensor shape mismatch " + to_string(shape_) + " vs " +
                                  to_string(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i)
      data_[i] += o.data_[i];
    return *this;
  }

private:
  Shape shape_;
  std::vector<double> data_;
};

/// Mutable view on one trainable buffer and its gradient accumulator.
struct ParamRef {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
  bool decay = true;
};

/// Mutable view on a non-trainable buffer (running statistics).
struct StateRef {
  std::string name;
  std::span<double> value;
};

/// Deterministic generator for a (seed, stream...) tuple.
template <typename... Ints>
std::mt19937_64 make_rng(std::uint64_t seed, Ints... streams) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(streams)...};
  return std::mt19937_64(seq);
}

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v)
    s += x * x;
  return s;
}

} // namespace ltr
