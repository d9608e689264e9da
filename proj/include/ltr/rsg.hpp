// SPDX-License-Identifier: Apache-2.0
/**
 * @file   rsg.hpp
 * @brief  Rare-class sample generator: center assignment, same-class pair
 *         head, feature displacement, 1x1 vector transform and the phased
 *         synthesis of new rare-class feature maps.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ltr/centers.hpp"
#include "ltr/nn.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

struct CenterAssignment {
  std::vector<double> gamma;
  int nearest = 0;
};

/// gamma = softmax(-||x - up(C_i^y)||^2); nearest is the first arg-max.
inline CenterAssignment assign_centers(std::span<const double> feature, const Shape &feature_shape,
                                       int label, const ClassCenters &centers) {
  if (label < 0 || label >= centers.num_classes)
    throw std::invalid_argument("label " + std::to_string(label) + " has no centers");
  Shape fs = feature_shape;
  fs.n = 1;
  CenterAssignment a;
  a.gamma.resize(static_cast<std::size_t>(centers.k));
  std::vector<double> neg(static_cast<std::size_t>(centers.k));
  for (int i = 0; i < centers.k; ++i) {
    const auto up = upsample_nearest(centers.center(label, i), centers.shape, fs);
    double d = 0.0;
    for (std::size_t e = 0; e < up.size(); ++e)
      d += (feature[e] - up[e]) * (feature[e] - up[e]);
    neg[static_cast<std::size_t>(i)] = -d;
  }
  const double m = *std::max_element(neg.begin(), neg.end());
  double z = 0.0;
  for (std::size_t i = 0; i < neg.size(); ++i)
    z += a.gamma[i] = std::exp(neg[i] - m);
  for (double &g : a.gamma)
    g /= z;
  for (int i = 1; i < centers.k; ++i)
    if (a.gamma[static_cast<std::size_t>(i)] > a.gamma[static_cast<std::size_t>(a.nearest)])
      a.nearest = i;
  return a;
}

struct BatchAssignment {
  Matrix gamma; ///< batch x K
  std::vector<int> nearest;
};

inline BatchAssignment assign_centers(const Tensor &features, std::span<const int> labels,
                                      const ClassCenters &centers) {
  BatchAssignment out;
  out.gamma.resize(static_cast<Eigen::Index>(features.shape().n), centers.k);
  for (std::size_t i = 0; i < features.shape().n; ++i) {
    auto a = assign_centers(features.sample(i), features.shape(), labels[i], centers);
    for (int k = 0; k < centers.k; ++k)
      out.gamma(static_cast<Eigen::Index>(i), k) = a.gamma[static_cast<std::size_t>(k)];
    out.nearest.push_back(a.nearest);
  }
  return out;
}

/// x - up(C_nearest^y) for one sample.
inline std::vector<double> feature_displacement(std::span<const double> feature,
                                                const Shape &feature_shape, int label,
                                                int nearest, const ClassCenters &centers) {
  Shape fs = feature_shape;
  fs.n = 1;
  if (feature.size() != fs.sample_size())
    throw std::invalid_argument("feature size does not match its shape");
  const auto up = upsample_nearest(centers.center(label, nearest), centers.shape, fs);
  std::vector<double> fd(feature.size());
  for (std::size_t e = 0; e < fd.size(); ++e)
    fd[e] = feature[e] - up[e];
  return fd;
}

inline std::vector<double> feature_displacement(std::span<const double> feature,
                                                const Shape &feature_shape, int label,
                                                const ClassCenters &centers) {
  const auto a = assign_centers(feature, feature_shape, label, centers);
  return feature_displacement(feature, feature_shape, label, a.nearest, centers);
}

/**
 * Same-class pair classifier on globally pooled features. The input is the
 * order-invariant pair (a + b, |a - b|), so prob(a, b) == prob(b, a) exactly.
 * The output layer starts at zero, giving 0.5 for every pair.
 */
class PairHead {
public:
  PairHead() = default;
  PairHead(std::size_t channels, std::size_t hidden, std::mt19937_64 &rng)
      : channels_(channels), hidden_(hidden), w1_(hidden * 2 * channels), b1_(hidden),
        w2_(hidden), b2_(1) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (2.0 * channels)));
    for (double &w : w1_.value)
      w = dist(rng);
  }

  struct Cache {
    Matrix a, b, input, hidden;
    Vector probs;
  };

  std::size_t channels() const { return channels_; }

  Cache forward(const Matrix &a, const Matrix &b) const {
    Cache c;
    c.a = a;
    c.b = b;
    c.input.resize(a.rows(), 2 * a.cols());
    c.input.leftCols(a.cols()) = a + b;
    c.input.rightCols(a.cols()) = (a - b).cwiseAbs();
    c.hidden = (c.input * w1().transpose()).rowwise() + b1().transpose();
    c.hidden = c.hidden.cwiseMax(0.0);
    c.probs.resize(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double logit = c.hidden.row(i).dot(w2()) + b2_.value[0];
      c.probs(i) = 1.0 / (1.0 + std::exp(-logit));
    }
    return c;
  }

  double prob(std::span<const double> a, std::span<const double> b) const {
    const auto ma = Eigen::Map<const Eigen::RowVectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
    const auto mb = Eigen::Map<const Eigen::RowVectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    return forward(Matrix(ma), Matrix(mb)).probs(0);
  }

  /// Returns d/da and d/db; parameter gradients accumulate only when `update_params`.
  std::pair<Matrix, Matrix> backward(const Cache &c, const Vector &d_probs, bool update_params) {
    const Vector d_logit = d_probs.array() * c.probs.array() * (1.0 - c.probs.array());
    Matrix d_hidden = d_logit * w2().transpose();
    d_hidden = (c.hidden.array() > 0.0).select(d_hidden, 0.0);
    if (update_params) {
      Eigen::Map<Vector>(w2_.grad.data(), static_cast<Eigen::Index>(hidden_)) +=
          c.hidden.transpose() * d_logit;
      b2_.grad[0] += d_logit.sum();
      MatrixMap(w1_.grad.data(), static_cast<Eigen::Index>(hidden_),
                static_cast<Eigen::Index>(2 * channels_)) += d_hidden.transpose() * c.input;
      Eigen::Map<Eigen::RowVectorXd>(b1_.grad.data(), static_cast<Eigen::Index>(hidden_)) +=
          d_hidden.colwise().sum();
    }
    const Matrix d_input = d_hidden * w1();
    const auto ch = static_cast<Eigen::Index>(channels_);
    const Matrix d_sum = d_input.leftCols(ch);
    const Matrix sign = (c.a - c.b).array().sign().matrix();
    const Matrix d_abs = d_input.rightCols(ch).cwiseProduct(sign);
    return {d_sum + d_abs, d_sum - d_abs};
  }

  void collect(std::vector<ParamRef> &out, const std::string &prefix) {
    out.push_back(w1_.ref(prefix + ".w1"));
    out.push_back(b1_.ref(prefix + ".b1", false));
    out.push_back(w2_.ref(prefix + ".w2"));
    out.push_back(b2_.ref(prefix + ".b2", false));
  }

private:
  ConstMatrixMap w1() const {
    return {w1_.value.data(), static_cast<Eigen::Index>(hidden_),
            static_cast<Eigen::Index>(2 * channels_)};
  }
  Eigen::Map<const Vector> b1() const {
    return {b1_.value.data(), static_cast<Eigen::Index>(hidden_)};
  }
  Eigen::Map<const Vector> w2() const {
    return {w2_.value.data(), static_cast<Eigen::Index>(hidden_)};
  }

  std::size_t channels_ = 0, hidden_ = 0;
  nn::Buffer w1_, b1_, w2_, b2_;
};

/// Learnable channel-mixing 1x1 convolution without bias; starts as the identity.
class VectorTransform {
public:
  VectorTransform() = default;
  explicit VectorTransform(std::size_t channels) : channels_(channels), weight_(channels * channels) {
    for (std::size_t c = 0; c < channels; ++c)
      weight_.value[c * channels + c] = 1.0;
  }

  std::size_t channels() const { return channels_; }
  std::span<double> weights() { return weight_.value; }

  Tensor apply(const Tensor &x) const {
    const Shape &s = x.shape();
    if (s.c != channels_)
      throw std::invalid_argument("vector transform expects " + std::to_string(channels_) +
                                  " channels, got " + to_string(s));
    Tensor y(s);
    const auto hw = static_cast<Eigen::Index>(s.positions());
    const auto ch = static_cast<Eigen::Index>(channels_);
    for (std::size_t n = 0; n < s.n; ++n) {
      ConstMatrixMap in(x.data() + n * s.sample_size(), ch, hw);
      MatrixMap out(y.data() + n * s.sample_size(), ch, hw);
      out.noalias() = w() * in;
    }
    return y;
  }

  /// Accumulates dL/dW for input `x` and output gradient `dy`; returns dL/dx.
  Tensor backward(const Tensor &x, const Tensor &dy) {
    const Shape &s = x.shape();
    const auto hw = static_cast<Eigen::Index>(s.positions());
    const auto ch = static_cast<Eigen::Index>(channels_);
    MatrixMap dw(weight_.grad.data(), ch, ch);
    Tensor dx(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      ConstMatrixMap in(x.data() + n * s.sample_size(), ch, hw);
      ConstMatrixMap g(dy.data() + n * s.sample_size(), ch, hw);
      dw.noalias() += g * in.transpose();
      MatrixMap(dx.data() + n * s.sample_size(), ch, hw).noalias() = w().transpose() * g;
    }
    return dx;
  }

  void collect(std::vector<ParamRef> &out, const std::string &prefix) {
    out.push_back(weight_.ref(prefix + ".weight", false));
  }

private:
  ConstMatrixMap w() const {
    return {weight_.value.data(), static_cast<Eigen::Index>(channels_),
            static_cast<Eigen::Index>(channels_)};
  }

  std::size_t channels_ = 0;
  nn::Buffer weight_;
};

enum class RareRule { GeometricMean, Fraction };

/// Which classes donate displacement (frequent) and which receive new samples (rare).
struct RareFreqPartition {
  std::vector<int> rare;
  std::vector<int> frequent;
  std::vector<bool> is_rare;
  RareRule rule = RareRule::GeometricMean;
};

/**
 * GeometricMean: rare = classes whose count is below the geometric mean of all
 * counts. Fraction: the `fraction` share of classes with the smallest counts
 * (ties broken by larger class id first) is rare.
 */
inline RareFreqPartition make_partition(const std::vector<int> &counts,
                                        RareRule rule = RareRule::GeometricMean,
                                        double fraction = 0.5) {
  if (counts.empty())
    throw ConfigError("cannot partition an empty class list");
  RareFreqPartition p;
  p.rule = rule;
  p.is_rare.assign(counts.size(), false);
  if (rule == RareRule::GeometricMean) {
    double log_sum = 0.0;
    for (int n : counts)
      log_sum += std::log(static_cast<double>(std::max(n, 1)));
    const double gm = std::exp(log_sum / static_cast<double>(counts.size()));
    for (std::size_t j = 0; j < counts.size(); ++j)
      p.is_rare[j] = static_cast<double>(counts[j]) < gm * (1.0 - 1e-12);
  } else {
    if (!(fraction >= 0.0 && fraction <= 1.0))
      throw ConfigError("rare fraction must lie in [0, 1]");
    std::vector<std::size_t> order(counts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return counts[a] != counts[b] ? counts[a] < counts[b] : a > b;
    });
    const auto n_rare = static_cast<std::size_t>(std::floor(fraction * counts.size()));
    for (std::size_t r = 0; r < n_rare; ++r)
      p.is_rare[order[r]] = true;
  }
  for (std::size_t j = 0; j < counts.size(); ++j)
    (p.is_rare[j] ? p.rare : p.frequent).push_back(static_cast<int>(j));
  return p;
}

struct GenerationResult {
  Tensor features;             ///< batch followed by the B_n generated maps
  std::vector<int> labels;
  int generated = 0;           ///< B_n
  std::vector<std::size_t> rare_index; ///< source row of each generated sample
  std::vector<std::size_t> freq_index; ///< donor row of each generated sample
  Tensor transformed_fd;       ///< T(x_fd-freq)
  Tensor rare_fd;
  Tensor freq_fd;
};

/**
 * For epoch > t_th every rare-class sample of the batch is paired with a
 * frequent-class donor drawn uniformly from the same batch, and
 *   x_new = T(x_freq - up(C_K^freq)) + x_rare
 * is appended with the rare label. Otherwise the batch is returned unchanged.
 */
inline GenerationResult generate_rare_samples(const Tensor &features, std::span<const int> labels,
                                              const ClassCenters &centers,
                                              const VectorTransform &transform,
                                              const RareFreqPartition &partition, int epoch,
                                              int t_th, std::mt19937_64 &rng) {
  GenerationResult out;
  out.features = features;
  out.labels.assign(labels.begin(), labels.end());
  Shape fd_shape = features.shape();
  fd_shape.n = 0;
  out.transformed_fd = out.rare_fd = out.freq_fd = Tensor(fd_shape);
  if (epoch <= t_th)
    return out;

  std::vector<std::size_t> rare_rows, freq_rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= partition.is_rare.size())
      throw std::invalid_argument("label outside the rare/frequent partition");
    (partition.is_rare[y] ? rare_rows : freq_rows).push_back(i);
  }
  if (rare_rows.empty() || freq_rows.empty())
    return out;

  const Shape &fs = features.shape();
  const std::size_t m = rare_rows.size(), stride = fs.sample_size();
  Shape gen_shape = fs;
  gen_shape.n = m;
  Tensor freq_fd(gen_shape), rare_fd(gen_shape);
  std::uniform_int_distribution<std::size_t> pick(0, freq_rows.size() - 1);
  for (std::size_t g = 0; g < m; ++g) {
    const std::size_t r = rare_rows[g], f = freq_rows[pick(rng)];
    out.rare_index.push_back(r);
    out.freq_index.push_back(f);
    const auto ffd = feature_displacement(features.sample(f), fs, labels[f], centers);
    const auto rfd = feature_displacement(features.sample(r), fs, labels[r], centers);
    std::copy(ffd.begin(), ffd.end(), freq_fd.sample(g).begin());
    std::copy(rfd.begin(), rfd.end(), rare_fd.sample(g).begin());
  }
  out.transformed_fd = transform.apply(freq_fd);
  out.freq_fd = std::move(freq_fd);
  out.rare_fd = std::move(rare_fd);

  Shape aug = fs;
  aug.n = fs.n + m;
  Tensor augmented(aug);
  std::copy(features.vec().begin(), features.vec().end(), augmented.vec().begin());
  for (std::size_t g = 0; g < m; ++g) {
    auto dst = augmented.sample(fs.n + g);
    const auto x_rare = features.sample(out.rare_index[g]);
    const auto t = out.transformed_fd.sample(g);
    for (std::size_t e = 0; e < stride; ++e)
      dst[e] = t[e] + x_rare[e];
    out.labels.push_back(labels[out.rare_index[g]]);
  }
  out.features = std::move(augmented);
  out.generated = static_cast<int>(m);
  return out;
}

/// Block average of a feature map onto the center grid (inverse of nearest upsampling).
inline std::vector<double> downsample_to_center(std::span<const double> feature, const Shape &from,
                                                const Shape &to) {
  check_upsample(to, from);
  std::vector<double> out(to.sample_size(), 0.0), hits(to.sample_size(), 0.0);
  for (std::size_t c = 0; c < from.c; ++c)
    for (std::size_t h = 0; h < from.h; ++h)
      for (std::size_t w = 0; w < from.w; ++w) {
        const std::size_t k = (c * to.h + h * to.h / from.h) * to.w + w * to.w / from.w;
        out[k] += feature[(c * from.h + h) * from.w + w];
        hits[k] += 1.0;
      }
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] /= hits[k];
  return out;
}

/**
 * k-means initialisation of K centers per class from a pass of features:
 * k-means++ seeding followed by a few Lloyd iterations. Classes with fewer
 * than K samples reuse their samples cyclically.
 */
inline void init_centers_kmeans(ClassCenters &centers, const Tensor &features,
                                std::span<const int> labels, std::uint64_t seed,
                                int iterations = 10) {
  const Shape &fs = features.shape();
  const std::size_t dim = centers.center_size();
  for (int y = 0; y < centers.num_classes; ++y) {
    std::vector<std::vector<double>> pts;
    for (std::size_t i = 0; i < fs.n; ++i)
      if (labels[i] == y)
        pts.push_back(downsample_to_center(features.sample(i), fs, centers.shape));
    if (pts.empty())
      continue;
    auto rng = make_rng(seed, 0xce17, static_cast<std::uint32_t>(y));
    auto dist2 = [dim](const std::vector<double> &a, std::span<const double> b) {
      double d = 0.0;
      for (std::size_t e = 0; e < dim; ++e)
        d += (a[e] - b[e]) * (a[e] - b[e]);
      return d;
    };

    std::vector<std::size_t> chosen{std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)};
    while (chosen.size() < static_cast<std::size_t>(centers.k)) {
      if (chosen.size() >= pts.size()) {
        chosen.push_back(chosen[chosen.size() % pts.size()]);
        continue;
      }
      std::vector<double> w(pts.size());
      for (std::size_t p = 0; p < pts.size(); ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c : chosen)
          best = std::min(best, dist2(pts[p], pts[c]));
        w[p] = best;
      }
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      if (total <= 0.0) {
        chosen.push_back(chosen[chosen.size() % chosen.size()]);
        continue;
      }
      chosen.push_back(std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng));
    }
    for (int i = 0; i < centers.k; ++i)
      std::copy(pts[chosen[static_cast<std::size_t>(i)]].begin(),
                pts[chosen[static_cast<std::size_t>(i)]].end(), centers.center(y, i).begin());

    std::vector<int> assign(pts.size(), 0);
    for (int it = 0; it < iterations; ++it) {
      for (std::size_t p = 0; p < pts.size(); ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < centers.k; ++i) {
          const double d = dist2(pts[p], centers.center(y, i));
          if (d < best)
            best = d, assign[p] = i;
        }
      }
      for (int i = 0; i < centers.k; ++i) {
        std::vector<double> mean(dim, 0.0);
        int members = 0;
        for (std::size_t p = 0; p < pts.size(); ++p)
          if (assign[p] == i) {
            ++members;
            for (std::size_t e = 0; e < dim; ++e)
              mean[e] += pts[p][e];
          }
        if (members == 0)
          continue;
        for (std::size_t e = 0; e < dim; ++e)
          centers.center(y, i)[e] = mean[e] / members;
      }
    }
  }
}

} // namespace ltr
