// SPDX-License-Identifier: Apache-2.0
/**
 * @file   nn.hpp
 * @brief  Minimal layer set with hand-written backward passes: linear, ReLU,
 *         3x3 convolution, batch norm, CIFAR-style residual block and a
 *         sequential stage.
 *
 * Every layer has a const `infer` path that keeps no state and a `forward`
 * path that caches what `backward` needs. Gradients accumulate into the
 * layer's own buffers until `zero_grad`. Batch norm is the one layer whose
 * `infer` differs from `forward`: it uses running statistics, and
 * `infer_batch_stats` normalizes with the statistics of the given batch
 * without touching the running ones.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ltr/tensor.hpp"

namespace ltr::nn {

class Layer {
public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape &in) const = 0;
  virtual Tensor infer(const Tensor &x) const = 0;
  virtual Tensor forward(const Tensor &x) = 0;
  virtual Tensor backward(const Tensor &dy) = 0;
  virtual Tensor infer_batch_stats(const Tensor &x) const { return infer(x); }
  virtual void collect(std::vector<ParamRef> &, const std::string &) {}
  /// Non-trainable tensors that still belong in a checkpoint.
  virtual void collect_state(std::vector<StateRef> &, const std::string &) {}
};

struct Buffer {
  std::vector<double> value;
  std::vector<double> grad;

  explicit Buffer(std::size_t n = 0) : value(n, 0.0), grad(n, 0.0) {}
  ParamRef ref(std::string name, bool decay = true) {
    return {std::move(name), value, grad, decay};
  }
};

/// Fully connected layer over the flattened C*H*W sample; output is [N, out, 1, 1].
class Linear final : public Layer {
public:
  Linear(std::size_t in, std::size_t out, std::mt19937_64 &rng, double gain = std::sqrt(2.0))
      : in_(in), out_(out), weight_(in * out), bias_(out) {
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(in)));
    for (double &w : weight_.value)
      w = dist(rng);
  }

  std::string kind() const override { return "linear"; }
  Shape output_shape(const Shape &in) const override { return {in.n, out_, 1, 1}; }

  void zero_init() { std::fill(weight_.value.begin(), weight_.value.end(), 0.0); }

  Tensor infer(const Tensor &x) const override {
    if (x.shape().sample_size() != in_)
      throw std::invalid_argument("linear layer expects " + std::to_string(in_) +
                                  " inputs, got " + to_string(x.shape()));
    Tensor y(output_shape(x.shape()));
    y.as_matrix() = x.as_matrix() * weights().transpose();
    y.as_matrix().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(
        bias_.value.data(), static_cast<Eigen::Index>(out_));
    return y;
  }

  Tensor forward(const Tensor &x) override {
    input_ = x;
    return infer(x);
  }

  Tensor backward(const Tensor &dy) override {
    MatrixMap dw(weight_.grad.data(), static_cast<Eigen::Index>(out_),
                 static_cast<Eigen::Index>(in_));
    dw.noalias() += dy.as_matrix().transpose() * input_.as_matrix();
    Eigen::Map<Eigen::RowVectorXd> db(bias_.grad.data(), static_cast<Eigen::Index>(out_));
    db += dy.as_matrix().colwise().sum();
    Tensor dx(input_.shape());
    dx.as_matrix().noalias() = dy.as_matrix() * weights();
    return dx;
  }

  void collect(std::vector<ParamRef> &out, const std::string &prefix) override {
    out.push_back(weight_.ref(prefix + ".weight"));
    out.push_back(bias_.ref(prefix + ".bias", false));
  }

  ConstMatrixMap weights() const {
    return {weight_.value.data(), static_cast<Eigen::Index>(out_),
            static_cast<Eigen::Index>(in_)};
  }

private:
  std::size_t in_, out_;
  Buffer weight_, bias_;
  Tensor input_;
};

class ReLU final : public Layer {
public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape &in) const override { return in; }

  Tensor infer(const Tensor &x) const override {
    Tensor y = x;
    for (double &v : y.vec())
      v = v > 0.0 ? v : 0.0;
    return y;
  }
  Tensor forward(const Tensor &x) override {
    output_ = infer(x);
    return output_;
  }
  Tensor backward(const Tensor &dy) override {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (output_.data()[i] <= 0.0)
        dx.data()[i] = 0.0;
    return dx;
  }

private:
  Tensor output_;
};

/// Square-kernel 2-D convolution implemented with im2col.
class Conv2d final : public Layer {
public:
  Conv2d(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
         std::size_t pad, std::mt19937_64 &rng, bool bias = false)
      : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_(out_c * in_c * kernel * kernel), bias_(bias ? out_c : 0) {
    const double fan_in = static_cast<double>(in_c * kernel * kernel);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double &w : weight_.value)
      w = dist(rng);
  }

  std::string kind() const override { return "conv" + std::to_string(k_) + "x" + std::to_string(k_); }

  Shape output_shape(const Shape &in) const override {
    return {in.n, out_c_, (in.h + 2 * pad_ - k_) / stride_ + 1,
            (in.w + 2 * pad_ - k_) / stride_ + 1};
  }

  Tensor infer(const Tensor &x) const override {
    check_input(x.shape());
    const Shape os = output_shape(x.shape());
    Tensor y(os);
    Matrix cols;
    for (std::size_t n = 0; n < x.shape().n; ++n) {
      im2col(x, n, os, cols);
      MatrixMap out(y.data() + n * os.sample_size(), static_cast<Eigen::Index>(out_c_),
                    static_cast<Eigen::Index>(os.positions()));
      out.noalias() = weights() * cols;
      if (has_bias_)
        for (std::size_t c = 0; c < out_c_; ++c)
          out.row(static_cast<Eigen::Index>(c)).array() += bias_.value[c];
    }
    return y;
  }

  Tensor forward(const Tensor &x) override {
    input_ = x;
    return infer(x);
  }

  Tensor backward(const Tensor &dy) override {
    const Shape &is = input_.shape();
    const Shape os = output_shape(is);
    Tensor dx(is);
    MatrixMap dw(weight_.grad.data(), static_cast<Eigen::Index>(out_c_),
                 static_cast<Eigen::Index>(in_c_ * k_ * k_));
    Matrix cols, dcols;
    for (std::size_t n = 0; n < is.n; ++n) {
      im2col(input_, n, os, cols);
      ConstMatrixMap g(dy.data() + n * os.sample_size(), static_cast<Eigen::Index>(out_c_),
                       static_cast<Eigen::Index>(os.positions()));
      dw.noalias() += g * cols.transpose();
      if (has_bias_)
        for (std::size_t c = 0; c < out_c_; ++c)
          bias_.grad[c] += g.row(static_cast<Eigen::Index>(c)).sum();
      dcols.noalias() = weights().transpose() * g;
      col2im(dcols, n, os, dx);
    }
    return dx;
  }

  void collect(std::vector<ParamRef> &out, const std::string &prefix) override {
    out.push_back(weight_.ref(prefix + ".weight"));
    if (has_bias_)
      out.push_back(bias_.ref(prefix + ".bias", false));
  }

private:
  ConstMatrixMap weights() const {
    return {weight_.value.data(), static_cast<Eigen::Index>(out_c_),
            static_cast<Eigen::Index>(in_c_ * k_ * k_)};
  }

  void check_input(const Shape &s) const {
    if (s.c != in_c_ || s.h + 2 * pad_ < k_ || s.w + 2 * pad_ < k_)
      throw std::invalid_argument("conv layer cannot consume input " + to_string(s));
  }

  void im2col(const Tensor &x, std::size_t n, const Shape &os, Matrix &cols) const {
    const Shape &is = x.shape();
    cols.setZero(static_cast<Eigen::Index>(in_c_ * k_ * k_),
                 static_cast<Eigen::Index>(os.positions()));
    for (std::size_t c = 0; c < in_c_; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki)
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const auto row = static_cast<Eigen::Index>((c * k_ + ki) * k_ + kj);
          for (std::size_t oh = 0; oh < os.h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * stride_ + ki) -
                            static_cast<std::ptrdiff_t>(pad_);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.h))
              continue;
            for (std::size_t ow = 0; ow < os.w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * stride_ + kj) -
                              static_cast<std::ptrdiff_t>(pad_);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.w))
                continue;
              cols(row, static_cast<Eigen::Index>(oh * os.w + ow)) =
                  x.at(n, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
            }
          }
        }
  }

  void col2im(const Matrix &dcols, std::size_t n, const Shape &os, Tensor &dx) const {
    const Shape &is = dx.shape();
    for (std::size_t c = 0; c < in_c_; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki)
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const auto row = static_cast<Eigen::Index>((c * k_ + ki) * k_ + kj);
          for (std::size_t oh = 0; oh < os.h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * stride_ + ki) -
                            static_cast<std::ptrdiff_t>(pad_);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.h))
              continue;
            for (std::size_t ow = 0; ow < os.w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * stride_ + kj) -
                              static_cast<std::ptrdiff_t>(pad_);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.w))
                continue;
              dx.at(n, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)) +=
                  dcols(row, static_cast<Eigen::Index>(oh * os.w + ow));
            }
          }
        }
  }

  std::size_t in_c_, out_c_, k_, stride_, pad_;
  bool has_bias_;
  Buffer weight_, bias_;
  Tensor input_;
};

/**
 * Per-channel batch normalization over N, H and W. Training uses the batch
 * statistics and folds them into running estimates (unbiased variance);
 * inference uses the running estimates.
 */
class BatchNorm2d final : public Layer {
public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps), gamma_(channels), beta_(channels),
        running_mean_(channels, 0.0), running_var_(channels, 1.0) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  }

  std::string kind() const override { return "batchnorm"; }
  Shape output_shape(const Shape &in) const override { return in; }

  Tensor infer(const Tensor &x) const override {
    check_input(x.shape());
    return normalize(x, running_mean_, running_var_, nullptr);
  }

  Tensor infer_batch_stats(const Tensor &x) const override {
    check_input(x.shape());
    std::vector<double> mean, var;
    batch_stats(x, mean, var);
    return normalize(x, mean, var, nullptr);
  }

  Tensor forward(const Tensor &x) override {
    check_input(x.shape());
    const Shape &s = x.shape();
    std::vector<double> mean, var;
    batch_stats(x, mean, var);
    const double m = static_cast<double>(s.n * s.positions());
    for (std::size_t c = 0; c < c_; ++c) {
      running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean[c];
      const double unbiased = m > 1.0 ? var[c] * m / (m - 1.0) : var[c];
      running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * unbiased;
    }
    inv_std_.resize(c_);
    for (std::size_t c = 0; c < c_; ++c)
      inv_std_[c] = 1.0 / std::sqrt(var[c] + eps_);
    return normalize(x, mean, var, &xhat_);
  }

  Tensor backward(const Tensor &dy) override {
    const Shape &s = dy.shape();
    const std::size_t hw = s.positions();
    const double m = static_cast<double>(s.n * hw);
    Tensor dx(s);
    for (std::size_t c = 0; c < c_; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t off = (n * c_ + c) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          sum_dy += dy.data()[off + k];
          sum_dy_xhat += dy.data()[off + k] * xhat_.data()[off + k];
        }
      }
      gamma_.grad[c] += sum_dy_xhat;
      beta_.grad[c] += sum_dy;
      const double scale = gamma_.value[c] * inv_std_[c] / m;
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t off = (n * c_ + c) * hw;
        for (std::size_t k = 0; k < hw; ++k)
          dx.data()[off + k] =
              scale * (m * dy.data()[off + k] - sum_dy - xhat_.data()[off + k] * sum_dy_xhat);
      }
    }
    return dx;
  }

  void collect(std::vector<ParamRef> &out, const std::string &prefix) override {
    out.push_back(gamma_.ref(prefix + ".gamma", false));
    out.push_back(beta_.ref(prefix + ".beta", false));
  }

  void collect_state(std::vector<StateRef> &out, const std::string &prefix) override {
    out.push_back({prefix + ".running_mean", running_mean_});
    out.push_back({prefix + ".running_var", running_var_});
  }

private:
  void check_input(const Shape &s) const {
    if (s.c != c_)
      throw std::invalid_argument("batch norm expects " + std::to_string(c_) + " channels, got " +
                                  to_string(s));
  }

  void batch_stats(const Tensor &x, std::vector<double> &mean, std::vector<double> &var) const {
    const Shape &s = x.shape();
    const std::size_t hw = s.positions();
    const double m = static_cast<double>(s.n * hw);
    mean.assign(c_, 0.0);
    var.assign(c_, 0.0);
    for (std::size_t c = 0; c < c_; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t k = 0; k < hw; ++k)
          acc += x.data()[(n * c_ + c) * hw + k];
      mean[c] = acc / m;
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t k = 0; k < hw; ++k) {
          const double d = x.data()[(n * c_ + c) * hw + k] - mean[c];
          sq += d * d;
        }
      var[c] = sq / m;
    }
  }

  Tensor normalize(const Tensor &x, const std::vector<double> &mean, const std::vector<double> &var,
                   Tensor *xhat) const {
    const Shape &s = x.shape();
    const std::size_t hw = s.positions();
    Tensor y(s);
    if (xhat)
      *xhat = Tensor(s);
    for (std::size_t c = 0; c < c_; ++c) {
      const double inv = 1.0 / std::sqrt(var[c] + eps_);
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t off = (n * c_ + c) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          const double h = (x.data()[off + k] - mean[c]) * inv;
          if (xhat)
            xhat->data()[off + k] = h;
          y.data()[off + k] = gamma_.value[c] * h + beta_.value[c];
        }
      }
    }
    return y;
  }

  std::size_t c_;
  double momentum_, eps_;
  Buffer gamma_, beta_;
  std::vector<double> running_mean_, running_var_;
  std::vector<double> inv_std_;
  Tensor xhat_;
};

/**
 * Basic residual block of the CIFAR ResNet family: conv-bn-relu-conv-bn plus
 * a parameter-free shortcut (strided subsampling and zero channel padding
 * when the shape changes), followed by ReLU.
 */
class ResidualBlock final : public Layer {
public:
  ResidualBlock(std::size_t in_c, std::size_t out_c, std::size_t stride, std::mt19937_64 &rng)
      : in_c_(in_c), out_c_(out_c), stride_(stride), conv1_(in_c, out_c, 3, stride, 1, rng),
        conv2_(out_c, out_c, 3, 1, 1, rng), bn1_(out_c), bn2_(out_c) {}

  std::string kind() const override { return "resblock"; }
  Shape output_shape(const Shape &in) const override { return conv1_.output_shape(in); }

  Tensor infer(const Tensor &x) const override {
    Tensor y = bn2_.infer(conv2_.infer(relu_.infer(bn1_.infer(conv1_.infer(x)))));
    y += shortcut(x);
    return relu_.infer(y);
  }

  Tensor infer_batch_stats(const Tensor &x) const override {
    Tensor y = bn2_.infer_batch_stats(
        conv2_.infer(relu_.infer(bn1_.infer_batch_stats(conv1_.infer(x)))));
    y += shortcut(x);
    return relu_.infer(y);
  }

  Tensor forward(const Tensor &x) override {
    in_shape_ = x.shape();
    Tensor y = bn2_.forward(conv2_.forward(inner_relu_.forward(bn1_.forward(conv1_.forward(x)))));
    y += shortcut(x);
    return relu_.forward(y);
  }

  Tensor backward(const Tensor &dy) override {
    Tensor g = relu_.backward(dy);
    Tensor dx = conv1_.backward(bn1_.backward(inner_relu_.backward(conv2_.backward(bn2_.backward(g)))));
    dx += shortcut_backward(g);
    return dx;
  }

  void collect(std::vector<ParamRef> &out, const std::string &prefix) override {
    conv1_.collect(out, prefix + ".conv1");
    bn1_.collect(out, prefix + ".bn1");
    conv2_.collect(out, prefix + ".conv2");
    bn2_.collect(out, prefix + ".bn2");
  }

  void collect_state(std::vector<StateRef> &out, const std::string &prefix) override {
    bn1_.collect_state(out, prefix + ".bn1");
    bn2_.collect_state(out, prefix + ".bn2");
  }

private:
  Tensor shortcut(const Tensor &x) const {
    if (stride_ == 1 && in_c_ == out_c_)
      return x;
    const Shape os = output_shape(x.shape());
    Tensor y(os);
    for (std::size_t n = 0; n < os.n; ++n)
      for (std::size_t c = 0; c < in_c_; ++c)
        for (std::size_t h = 0; h < os.h; ++h)
          for (std::size_t w = 0; w < os.w; ++w)
            y.at(n, c, h, w) = x.at(n, c, h * stride_, w * stride_);
    return y;
  }

  Tensor shortcut_backward(const Tensor &g) const {
    if (stride_ == 1 && in_c_ == out_c_)
      return g;
    Tensor dx(in_shape_);
    const Shape &os = g.shape();
    for (std::size_t n = 0; n < os.n; ++n)
      for (std::size_t c = 0; c < in_c_; ++c)
        for (std::size_t h = 0; h < os.h; ++h)
          for (std::size_t w = 0; w < os.w; ++w)
            dx.at(n, c, h * stride_, w * stride_) += g.at(n, c, h, w);
    return dx;
  }

  std::size_t in_c_, out_c_, stride_;
  Conv2d conv1_, conv2_;
  BatchNorm2d bn1_, bn2_;
  ReLU inner_relu_, relu_;
  Shape in_shape_;
};

/// Ordered chain of layers; reports the first layer that produced a non-finite value.
class Sequential {
public:
  explicit Sequential(std::string name = "seq") : name_(std::move(name)) {}

  template <typename L, typename... Args> L &add(Args &&...args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L &ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  bool empty() const { return layers_.empty(); }
  const std::string &name() const { return name_; }

  Shape output_shape(Shape s) const {
    for (const auto &l : layers_)
      s = l->output_shape(s);
    return s;
  }

  Tensor infer(const Tensor &x) const {
    Tensor y = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      y = layers_[i]->infer(y);
      check(y, i);
    }
    return y;
  }

  Tensor infer_batch_stats(const Tensor &x) const {
    Tensor y = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      y = layers_[i]->infer_batch_stats(y);
      check(y, i);
    }
    return y;
  }

  Tensor forward(const Tensor &x) {
    Tensor y = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      y = layers_[i]->forward(y);
      check(y, i);
    }
    return y;
  }

  Tensor backward(const Tensor &dy) {
    Tensor g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;)
      g = layers_[i]->backward(g);
    return g;
  }

  void collect(std::vector<ParamRef> &out) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect(out, name_ + "." + std::to_string(i));
  }

  void collect_state(std::vector<StateRef> &out) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_state(out, name_ + "." + std::to_string(i));
  }

private:
  void check(const Tensor &y, std::size_t i) const {
    if (!y.all_finite())
      throw NumericalError("non-finite activation after layer " + name_ + "." +
                           std::to_string(i) + " (" + layers_[i]->kind() + ")");
  }

  std::string name_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Global average pooling to [N, C, 1, 1].
inline Tensor global_avg_pool(const Tensor &x) {
  const Shape &s = x.shape();
  Tensor y({s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.positions());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      double acc = 0.0;
      const double *p = x.data() + (n * s.c + c) * s.positions();
      for (std::size_t k = 0; k < s.positions(); ++k)
        acc += p[k];
      y.at(n, c, 0, 0) = acc * inv;
    }
  return y;
}

inline Tensor global_avg_pool_backward(const Tensor &dy, const Shape &in) {
  Tensor dx(in);
  const double inv = 1.0 / static_cast<double>(in.positions());
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c) {
      double *p = dx.data() + (n * in.c + c) * in.positions();
      const double g = dy.at(n, c, 0, 0) * inv;
      for (std::size_t k = 0; k < in.positions(); ++k)
        p[k] = g;
    }
  return dx;
}

/// Row-wise L2 normalisation with an epsilon floor on the norm.
struct RowNormalizer {
  static constexpr double kEps = 1e-12;

  static Matrix apply(const Matrix &x, Vector *norms = nullptr) {
    Matrix y(x.rows(), x.cols());
    Vector n(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      n(i) = std::max(x.row(i).norm(), kEps);
      y.row(i) = x.row(i) / n(i);
    }
    if (norms)
      *norms = n;
    return y;
  }

  /// Gradient of x -> x/|x| given the normalised rows and the original norms.
  static Matrix backward(const Matrix &dy, const Matrix &y, const Vector &norms) {
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      if (norms(i) <= kEps) {
        dx.row(i) = dy.row(i) / kEps;
        continue;
      }
      const double proj = dy.row(i).dot(y.row(i));
      dx.row(i) = (dy.row(i) - proj * y.row(i)) / norms(i);
    }
    return dx;
  }
};

} // namespace ltr::nn
