// SPDX-License-Identifier: Apache-2.0
/**
 * @file   losses.hpp
 * @brief  Supervised contrastive, label-distribution-aware margin, center
 *         estimation / sample contrastive and maximized-vector losses, each
 *         returning its value together with exact gradients, plus the
 *         weighted composite objective.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ltr/centers.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

struct LossGrad {
  double value = 0.0;
  Matrix grad;
};

struct SCLConfig {
  double tau = 0.1;
};

namespace detail {

inline void check_labels(std::span<const int> labels, Eigen::Index rows, int classes = -1) {
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    throw std::invalid_argument("label count " + std::to_string(labels.size()) +
                                " does not match batch size " + std::to_string(rows));
  if (classes > 0)
    for (int y : labels)
      if (y < 0 || y >= classes)
        throw std::invalid_argument("label " + std::to_string(y) + " out of range [0, " +
                                    std::to_string(classes) + ")");
}

inline double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd> &a) {
  const double m = a.maxCoeff();
  return m + std::log((a.array() - m).exp().sum());
}

} // namespace detail

/**
 * Supervised contrastive loss over a batch of embeddings.
 *
 * Anchor i with P_i >= 1 same-class partners contributes
 *   -1/P_i * sum_p log( exp(z_i.z_p / tau) / sum_{k != i} exp(z_i.z_k / tau) ),
 * and the batch value is the sum over anchors divided by the number of such
 * anchors. Anchors without a partner contribute nothing; a batch without any
 * positive pair returns 0 with a zero gradient.
 */
inline LossGrad scl_loss(const Matrix &z, std::span<const int> labels, const SCLConfig &cfg) {
  const Eigen::Index n = z.rows();
  if (n < 2)
    throw std::invalid_argument("supervised contrastive loss needs at least 2 samples");
  if (!(cfg.tau > 0.0))
    throw std::invalid_argument("temperature tau must be positive");
  if (!z.allFinite())
    throw NumericalError("non-finite embedding passed to supervised contrastive loss");
  detail::check_labels(labels, n);

  LossGrad out;
  out.grad = Matrix::Zero(n, z.cols());
  const Matrix sim = (z * z.transpose()) / cfg.tau;

  std::vector<int> positives(static_cast<std::size_t>(n), 0);
  int anchors = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != i && labels[static_cast<std::size_t>(k)] == labels[static_cast<std::size_t>(i)])
        ++positives[static_cast<std::size_t>(i)];
    anchors += positives[static_cast<std::size_t>(i)] > 0 ? 1 : 0;
  }
  if (anchors == 0)
    return out;

  // coeff(i, k) = dLoss / dsim(i, k)
  Matrix coeff = Matrix::Zero(n, n);
  const double inv_anchors = 1.0 / anchors;
  Eigen::RowVectorXd row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = positives[static_cast<std::size_t>(i)];
    if (p == 0)
      continue;
    row = sim.row(i);
    row(i) = -std::numeric_limits<double>::infinity();
    const double lse = detail::log_sum_exp(row);
    double pos_sum = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k == i)
        continue;
      const bool is_pos =
          labels[static_cast<std::size_t>(k)] == labels[static_cast<std::size_t>(i)];
      if (is_pos)
        pos_sum += sim(i, k);
      coeff(i, k) = inv_anchors * (std::exp(sim(i, k) - lse) - (is_pos ? 1.0 / p : 0.0));
    }
    out.value += inv_anchors * (lse - pos_sum / p);
  }
  out.grad = (coeff + coeff.transpose()) * z / cfg.tau;
  return out;
}

/// Per-class LDAM margins Delta_j = C / n_j^(1/4), with C chosen so max Delta = max_m.
struct MarginTable {
  std::vector<double> deltas;
  double max_m = 0.5;
  double s = 30.0;
};

inline MarginTable ldam_margins(std::span<const int> counts, double max_m, double s) {
  if (counts.empty())
    throw std::invalid_argument("ldam margins need at least one class count");
  if (!(max_m > 0.0) || !(s > 0.0))
    throw std::invalid_argument("max_m and s must be positive");
  MarginTable t;
  t.max_m = max_m;
  t.s = s;
  t.deltas.reserve(counts.size());
  double largest = 0.0;
  for (int n : counts) {
    if (n < 1)
      throw std::invalid_argument("class counts must be >= 1 for ldam margins");
    t.deltas.push_back(std::pow(static_cast<double>(n), -0.25));
    largest = std::max(largest, t.deltas.back());
  }
  const double c = max_m / largest;
  for (double &d : t.deltas)
    d *= c;
  return t;
}

/// All-zero margins; with s = 1 the LDAM loss is plain softmax cross-entropy.
inline MarginTable zero_margins(std::size_t classes, double s = 1.0) {
  return {std::vector<double>(classes, 0.0), 0.0, s};
}

/**
 * Batch-mean LDAM loss: -log softmax(s * (z - Delta_y e_y))_y. Logits are
 * expected to be cosine similarities in [-1, 1].
 */
inline LossGrad ldam_loss(const Matrix &logits, std::span<const int> labels,
                          const MarginTable &margins) {
  const Eigen::Index n = logits.rows(), classes = logits.cols();
  if (n == 0)
    throw std::invalid_argument("ldam loss on an empty batch");
  if (static_cast<Eigen::Index>(margins.deltas.size()) != classes)
    throw std::invalid_argument("margin table has " + std::to_string(margins.deltas.size()) +
                                " entries for " + std::to_string(classes) + " classes");
  detail::check_labels(labels, n, static_cast<int>(classes));

  LossGrad out;
  out.grad.resize(n, classes);
  Eigen::RowVectorXd a(classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    a = margins.s * logits.row(i);
    a(y) -= margins.s * margins.deltas[static_cast<std::size_t>(y)];
    const double lse = detail::log_sum_exp(a);
    out.value += lse - a(y);
    out.grad.row(i) = (a.array() - lse).exp().matrix() * margins.s;
    out.grad(i, y) -= margins.s;
  }
  out.value /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

struct CescResult {
  double value = 0.0;
  double center_term = 0.0;
  double pair_term = 0.0;
  Tensor grad_features;
  std::vector<double> grad_centers; ///< same layout as ClassCenters::data
  std::vector<double> grad_pair_probs;
};

/**
 * Center estimation with sample contrastive loss.
 *
 * The first term is the batch mean of sum_i gamma_i * ||x - up(C_i^y)||^2.
 * The second is the mean binary cross-entropy of the pair probabilities
 * against their same-class targets. Once `epoch > t_th` the pair term is
 * still reported but contributes no gradient. `gamma` is treated as given.
 */
inline CescResult cesc_loss(const Tensor &features, std::span<const int> labels,
                            const ClassCenters &centers, const Matrix &gamma,
                            std::span<const double> pair_probs,
                            std::span<const int> pair_targets, int epoch, int t_th) {
  const Shape &fs = features.shape();
  const auto n = static_cast<Eigen::Index>(fs.n);
  if (n == 0)
    throw std::invalid_argument("cesc loss on an empty batch");
  detail::check_labels(labels, n, centers.num_classes);
  if (gamma.rows() != n || gamma.cols() != centers.k)
    throw std::invalid_argument("gamma must be batch x K");
  if (pair_probs.size() != pair_targets.size())
    throw std::invalid_argument("pair probabilities and targets differ in length");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(gamma.row(i).sum() - 1.0) > 1e-6 || (gamma.row(i).array() < 0.0).any())
      throw std::invalid_argument("gamma row " + std::to_string(i) +
                                  " is not a probability distribution");
  }
  for (std::size_t p = 0; p < pair_probs.size(); ++p) {
    if (!(pair_probs[p] > 0.0 && pair_probs[p] < 1.0))
      throw std::invalid_argument("pair probability outside (0, 1)");
    if (pair_targets[p] != 0 && pair_targets[p] != 1)
      throw std::invalid_argument("pair targets must be 0 or 1");
  }

  CescResult out;
  out.grad_features = Tensor(fs);
  out.grad_centers.assign(centers.data.size(), 0.0);
  out.grad_pair_probs.assign(pair_probs.size(), 0.0);

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> diff(fs.sample_size());
  for (Eigen::Index s = 0; s < n; ++s) {
    const int y = labels[static_cast<std::size_t>(s)];
    const auto x = features.sample(static_cast<std::size_t>(s));
    auto gx = out.grad_features.sample(static_cast<std::size_t>(s));
    for (int i = 0; i < centers.k; ++i) {
      const double g = gamma(s, i);
      const auto up = upsample_nearest(centers.center(y, i), centers.shape, fs);
      double dist = 0.0;
      for (std::size_t e = 0; e < diff.size(); ++e) {
        diff[e] = x[e] - up[e];
        dist += diff[e] * diff[e];
      }
      out.center_term += inv_n * g * dist;
      for (std::size_t e = 0; e < diff.size(); ++e)
        diff[e] *= 2.0 * inv_n * g;
      for (std::size_t e = 0; e < diff.size(); ++e)
        gx[e] += diff[e];
      for (double &d : diff)
        d = -d;
      upsample_nearest_adjoint(diff, centers.shape, fs,
                               {out.grad_centers.data() + centers.offset(y, i),
                                centers.center_size()});
    }
  }

  if (!pair_probs.empty()) {
    const double inv_p = 1.0 / static_cast<double>(pair_probs.size());
    const bool frozen = epoch > t_th;
    for (std::size_t p = 0; p < pair_probs.size(); ++p) {
      const double q = pair_probs[p];
      const double t = pair_targets[p];
      out.pair_term -= inv_p * (t * std::log(q) + (1.0 - t) * std::log1p(-q));
      if (!frozen)
        out.grad_pair_probs[p] = inv_p * (-t / q + (1.0 - t) / (1.0 - q));
    }
  }
  out.value = out.center_term + out.pair_term;
  return out;
}

struct MvResult {
  double value = 0.0;
  double direction_term = 0.0;
  double length_term = 0.0;
  double pair_term = 0.0;
  Tensor grad_transformed;
  Tensor grad_rare;
  Tensor grad_freq;
  std::vector<double> grad_pair_probs;
};

/**
 * Maximized-vector loss over B_n generated samples. For every spatial
 * position the channel vectors of T(fd_freq), fd_rare and fd_freq are
 * compared: |cos(T fd_freq, fd_rare) - 1| + | |T fd_freq| - |fd_freq| |,
 * summed over positions and averaged over samples, plus -mean log gamma*.
 * Norms are floored at 1e-12; a position where both cosine operands fall
 * below the floor adds nothing to the direction term.
 */
inline MvResult mv_loss(const Tensor &transformed, const Tensor &rare_fd, const Tensor &freq_fd,
                        std::span<const double> pair_probs) {
  constexpr double eps = 1e-12;
  const Shape &s = transformed.shape();
  if (s.n == 0)
    throw std::invalid_argument("mv loss requires at least one generated sample");
  if (!(rare_fd.shape() == s) || !(freq_fd.shape() == s))
    throw std::invalid_argument("mv loss inputs must share one shape");
  if (pair_probs.size() != s.n)
    throw std::invalid_argument("mv loss needs one pair probability per generated sample");
  for (double q : pair_probs)
    if (!(q > 0.0 && q <= 1.0))
      throw std::invalid_argument("pair probability outside (0, 1]");

  MvResult out;
  out.grad_transformed = Tensor(s);
  out.grad_rare = Tensor(s);
  out.grad_freq = Tensor(s);
  out.grad_pair_probs.assign(s.n, 0.0);
  const double inv_n = 1.0 / static_cast<double>(s.n);
  const std::size_t hw = s.positions();

  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t pos = 0; pos < hw; ++pos) {
      auto idx = [&](std::size_t c) { return (n * s.c + c) * hw + pos; };
      double dot = 0.0, aa = 0.0, bb = 0.0, ff = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double a = transformed.data()[idx(c)], b = rare_fd.data()[idx(c)],
                     f = freq_fd.data()[idx(c)];
        dot += a * b;
        aa += a * a;
        bb += b * b;
        ff += f * f;
      }
      const double na_raw = std::sqrt(aa), nb_raw = std::sqrt(bb), nf_raw = std::sqrt(ff);
      const double na = std::max(na_raw, eps), nb = std::max(nb_raw, eps),
                   nf = std::max(nf_raw, eps);

      if (na_raw >= eps || nb_raw >= eps) {
        const double cos = dot / (na * nb);
        out.direction_term += inv_n * std::abs(cos - 1.0);
        const double sgn = cos > 1.0 ? 1.0 : (cos < 1.0 ? -1.0 : 0.0);
        for (std::size_t c = 0; c < s.c; ++c) {
          const double a = transformed.data()[idx(c)], b = rare_fd.data()[idx(c)];
          double da = b / (na * nb), db = a / (na * nb);
          if (na_raw >= eps)
            da -= cos * a / (na * na);
          if (nb_raw >= eps)
            db -= cos * b / (nb * nb);
          out.grad_transformed.data()[idx(c)] += inv_n * sgn * da;
          out.grad_rare.data()[idx(c)] += inv_n * sgn * db;
        }
      }

      const double gap = na_raw - nf_raw;
      out.length_term += inv_n * std::abs(gap);
      const double sgn = gap > 0.0 ? 1.0 : (gap < 0.0 ? -1.0 : 0.0);
      if (sgn != 0.0)
        for (std::size_t c = 0; c < s.c; ++c) {
          if (na_raw >= eps)
            out.grad_transformed.data()[idx(c)] += inv_n * sgn * transformed.data()[idx(c)] / na;
          if (nf_raw >= eps)
            out.grad_freq.data()[idx(c)] -= inv_n * sgn * freq_fd.data()[idx(c)] / nf;
        }
    }
    out.pair_term -= inv_n * std::log(pair_probs[n]);
    out.grad_pair_probs[n] = -inv_n / pair_probs[n];
  }
  out.value = out.direction_term + out.length_term + out.pair_term;
  return out;
}

/// Weights of the four objective terms.
struct LossWeights {
  double alpha = 1.0;  ///< supervised contrastive
  double lambda = 1.0; ///< LDAM
  double eta = 1e-5;   ///< CESC
  double mu = 1e-6;    ///< MV

  void validate() const {
    for (double w : {alpha, lambda, eta, mu})
      if (!std::isfinite(w) || w < 0.0)
        throw ConfigError("loss weights must be finite and non-negative");
  }
};

struct LossParts {
  double scl = 0.0, ldam = 0.0, cesc = 0.0, mv = 0.0;
};

/// alpha*SCL + lambda*LDAM + eta*CESC, plus mu*MV once generation is active (epoch > t_th).
inline double total_loss(const LossParts &parts, const LossWeights &w, int epoch, int t_th) {
  w.validate();
  for (double p : {parts.scl, parts.ldam, parts.cesc, parts.mv})
    if (!std::isfinite(p))
      throw NumericalError("non-finite loss part");
  double total = w.alpha * parts.scl + w.lambda * parts.ldam + w.eta * parts.cesc;
  if (epoch > t_th)
    total += w.mu * parts.mv;
  return total;
}

} // namespace ltr
