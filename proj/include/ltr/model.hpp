// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  End-to-end network: backbone front stages, the rare-class sample
 *         generator before the last stage, global average pooling, a
 *         unit-norm projection head (contrastive branch) and a cosine
 *         classifier (margin branch).
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ltr/centers.hpp"
#include "ltr/nn.hpp"
#include "ltr/rsg.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

enum class Backbone { Mlp, ResNet };
enum class ClassifierKind { Cosine, Linear };

struct RsgConfig {
  bool enabled = true;
  int centers_per_class = 3;
  RareRule rare_rule = RareRule::GeometricMean;
  double rare_fraction = 0.5;
  int pair_hidden = 32;
  int center_h = 0; ///< 0 keeps the feature-map resolution
  int center_w = 0;
};

struct NetworkConfig {
  Backbone backbone = Backbone::Mlp;
  Shape input{1, 8, 1, 1};
  int num_classes = 10;
  int hidden_dim = 64;
  int feature_dim = 32;
  int projection_dim = 32;
  ClassifierKind classifier = ClassifierKind::Cosine;
  int resnet_blocks = 5; ///< blocks per stage; 5 gives the 32-layer layout
  int resnet_width = 16;
  RsgConfig rsg;

  void validate() const {
    if (num_classes < 1 || hidden_dim < 1 || feature_dim < 1 || projection_dim < 1)
      throw ConfigError("network dimensions must be positive");
    if (input.sample_size() == 0)
      throw ConfigError("network input shape is empty");
    if (backbone == Backbone::ResNet && (resnet_blocks < 1 || resnet_width < 1))
      throw ConfigError("resnet needs at least one block per stage and positive width");
    if (rsg.enabled && (rsg.centers_per_class < 1 || rsg.pair_hidden < 1))
      throw ConfigError("rsg needs K >= 1 and a positive pair-head width");
    if (rsg.center_h < 0 || rsg.center_w < 0)
      throw ConfigError("center resolution must be non-negative");
  }
};

struct RsgAux {
  Matrix gamma; ///< augmented batch x K
  std::vector<int> nearest;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  Vector pair_probs;
  std::vector<int> pair_targets;
  int generated = 0;
  std::vector<std::size_t> rare_index, freq_index;
  Tensor transformed_fd, rare_fd, freq_fd;
  Vector gen_pair_probs;
};

struct ForwardOutput {
  Tensor mid;            ///< pre-last-stage maps, generated samples appended
  Matrix features;       ///< post-GAP backbone features
  Matrix embeddings;     ///< unit-norm projections
  Matrix logits;         ///< cosine similarities (or affine scores for a linear head)
  std::vector<int> labels;
  RsgAux aux;
};

/// Gradients of the objective with respect to the forward outputs.
struct StepGrads {
  Matrix d_embeddings;
  Matrix d_logits;
  Tensor d_mid;              ///< direct gradient on ForwardOutput::mid; may be empty
  Vector d_pair_probs;       ///< for aux.pair_probs
  bool pair_head_trainable = true;
  Tensor d_transformed;      ///< for aux.transformed_fd; may be empty
  Vector d_gen_pair_probs;   ///< for aux.gen_pair_probs
};

struct EvalOutput {
  Matrix logits;
  Matrix features;
};

class Model {
public:
  Model(const NetworkConfig &cfg, std::uint64_t seed)
      : cfg_(cfg), front_("front"), back_("back"), proj_("proj") {
    cfg_.validate();
    auto rng = make_rng(seed, 0x1417);
    Shape in = cfg_.input;
    in.n = 1;
    if (cfg_.backbone == Backbone::Mlp) {
      const auto h = static_cast<std::size_t>(cfg_.hidden_dim);
      front_.add<nn::Linear>(in.sample_size(), h, rng);
      front_.add<nn::ReLU>();
      front_.add<nn::Linear>(h, h, rng);
      front_.add<nn::ReLU>();
      back_.add<nn::Linear>(h, static_cast<std::size_t>(cfg_.feature_dim), rng, 1.0);
    } else {
      const auto w = static_cast<std::size_t>(cfg_.resnet_width);
      front_.add<nn::Conv2d>(in.c, w, 3, 1, 1, rng);
      front_.add<nn::BatchNorm2d>(w);
      front_.add<nn::ReLU>();
      for (int b = 0; b < cfg_.resnet_blocks; ++b)
        front_.add<nn::ResidualBlock>(w, w, 1, rng);
      for (int b = 0; b < cfg_.resnet_blocks; ++b)
        front_.add<nn::ResidualBlock>(b == 0 ? w : 2 * w, 2 * w, b == 0 ? 2 : 1, rng);
      for (int b = 0; b < cfg_.resnet_blocks; ++b)
        back_.add<nn::ResidualBlock>(b == 0 ? 2 * w : 4 * w, 4 * w, b == 0 ? 2 : 1, rng);
      cfg_.feature_dim = static_cast<int>(4 * w);
    }
    mid_shape_ = front_.output_shape(in);
    const Shape feat_shape = back_.output_shape(mid_shape_);
    const std::size_t d = feat_shape.c;
    proj_.add<nn::Linear>(d, d, rng);
    proj_.add<nn::ReLU>();
    proj_.add<nn::Linear>(d, static_cast<std::size_t>(cfg_.projection_dim), rng, 1.0);

    const auto k = static_cast<std::size_t>(cfg_.num_classes);
    cls_weight_ = nn::Buffer(k * d);
    cls_bias_ = nn::Buffer(cfg_.classifier == ClassifierKind::Linear ? k : 0);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (double &v : cls_weight_.value)
      v = dist(rng);

    if (cfg_.rsg.enabled) {
      Shape cs = mid_shape_;
      if (cfg_.rsg.center_h > 0)
        cs.h = static_cast<std::size_t>(cfg_.rsg.center_h);
      if (cfg_.rsg.center_w > 0)
        cs.w = static_cast<std::size_t>(cfg_.rsg.center_w);
      check_upsample(cs, mid_shape_);
      centers_ = ClassCenters(cfg_.num_classes, cfg_.rsg.centers_per_class, cs);
      centers_grad_.assign(centers_.data.size(), 0.0);
      pair_head_ = PairHead(mid_shape_.c, static_cast<std::size_t>(cfg_.rsg.pair_hidden), rng);
      transform_ = VectorTransform(mid_shape_.c);
    }
  }

  const NetworkConfig &config() const { return cfg_; }
  bool rsg_enabled() const { return cfg_.rsg.enabled; }
  const Shape &mid_shape() const { return mid_shape_; }
  ClassCenters &centers() { return centers_; }
  const ClassCenters &centers() const { return centers_; }
  std::span<double> centers_grad() { return centers_grad_; }
  PairHead &pair_head() { return pair_head_; }
  VectorTransform &transform() { return transform_; }
  const VectorTransform &transform() const { return transform_; }
  RareFreqPartition &partition() { return partition_; }
  bool centers_ready() const { return centers_ready_; }
  void set_centers_ready(bool ready) { centers_ready_ = ready; }

  /// Front-stage feature maps without caching.
  Tensor infer_mid(const Tensor &x) const { return front_.infer(x); }

  /// Same, but batch norm uses the statistics of `x` (used to initialise centers).
  Tensor infer_mid_batch_stats(const Tensor &x) const { return front_.infer_batch_stats(x); }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    front_.collect(out);
    back_.collect(out);
    proj_.collect(out);
    out.push_back(cls_weight_.ref("classifier.weight"));
    if (cfg_.classifier == ClassifierKind::Linear)
      out.push_back(cls_bias_.ref("classifier.bias", false));
    if (cfg_.rsg.enabled) {
      pair_head_.collect(out, "rsg.pair");
      transform_.collect(out, "rsg.transform");
      out.push_back({"rsg.centers", centers_.data, centers_grad_, false});
    }
    return out;
  }

  /// Running statistics of the batch-norm layers.
  std::vector<StateRef> state() {
    std::vector<StateRef> out;
    front_.collect_state(out);
    back_.collect_state(out);
    return out;
  }

  void zero_grad() {
    for (auto &p : params())
      std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  /**
   * Training forward pass. With the generator enabled, every real sample gets
   * its center assignment, floor(B/2) random pairs go through the pair head,
   * and once `epoch > t_th` generated rare samples are appended after the
   * real ones before the last stage.
   */
  ForwardOutput forward_train(const Tensor &x, std::span<const int> labels, int epoch, int t_th,
                              std::mt19937_64 &rng) {
    if (x.shape().n < 2)
      throw std::invalid_argument("training batches need at least 2 samples");
    if (labels.size() != x.shape().n)
      throw std::invalid_argument("label count does not match the batch");
    for (int y : labels)
      if (y < 0 || y >= cfg_.num_classes)
        throw std::invalid_argument("label " + std::to_string(y) + " out of range");

    ForwardOutput out;
    real_n_ = x.shape().n;
    Tensor mid = front_.forward(x);
    out.labels.assign(labels.begin(), labels.end());

    if (cfg_.rsg.enabled) {
      auto &aux = out.aux;
      pair_cache_ = pair_forward(mid, labels, aux, rng);
      if (epoch > t_th) {
        GenerationResult gen = generate_rare_samples(mid, labels, centers_, transform_,
                                                     partition_, epoch, t_th, rng);
        aux.generated = gen.generated;
        aux.rare_index = std::move(gen.rare_index);
        aux.freq_index = std::move(gen.freq_index);
        aux.transformed_fd = std::move(gen.transformed_fd);
        aux.rare_fd = std::move(gen.rare_fd);
        aux.freq_fd = std::move(gen.freq_fd);
        mid = std::move(gen.features);
        out.labels = std::move(gen.labels);
        if (aux.generated > 0) {
          Matrix a(aux.generated, static_cast<Eigen::Index>(mid_shape_.c));
          Matrix b(aux.generated, static_cast<Eigen::Index>(mid_shape_.c));
          const Matrix pooled = pooled_rows(mid);
          for (int g = 0; g < aux.generated; ++g) {
            a.row(g) = pooled.row(static_cast<Eigen::Index>(real_n_) + g);
            b.row(g) = pooled.row(static_cast<Eigen::Index>(aux.rare_index[static_cast<std::size_t>(g)]));
          }
          gen_pair_cache_ = pair_head_.forward(a, b);
          aux.gen_pair_probs = clamp_probs(gen_pair_cache_.probs);
        }
      }
      BatchAssignment assign = assign_centers(mid, out.labels, centers_);
      aux.gamma = std::move(assign.gamma);
      aux.nearest = std::move(assign.nearest);
    }

    head_forward(mid, out);
    out.mid = std::move(mid);
    last_generated_ = out.aux.generated;
    return out;
  }

  void backward(const StepGrads &g) {
    const auto n_aug = static_cast<std::size_t>(feat_.rows());
    Matrix d_feat = Matrix::Zero(feat_.rows(), feat_.cols());

    if (g.d_embeddings.size() > 0) {
      const Matrix d_raw = nn::RowNormalizer::backward(g.d_embeddings, emb_, emb_norms_);
      d_feat += proj_.backward(Tensor::from_matrix(d_raw)).as_matrix();
    }
    if (g.d_logits.size() > 0)
      d_feat += classifier_backward(g.d_logits);

    Tensor d_back_out = nn::global_avg_pool_backward(Tensor::from_matrix(d_feat), back_out_shape_);
    Tensor d_mid = back_.backward(d_back_out);
    if (g.d_mid.size() > 0)
      d_mid += g.d_mid;

    const std::size_t hw = mid_shape_.positions();
    auto spread = [&](Tensor &target, std::size_t row, const Eigen::Ref<const Eigen::RowVectorXd> &d) {
      auto s = target.sample(row);
      for (std::size_t c = 0; c < mid_shape_.c; ++c)
        for (std::size_t k = 0; k < hw; ++k)
          s[c * hw + k] += d(static_cast<Eigen::Index>(c)) / static_cast<double>(hw);
    };

    if (cfg_.rsg.enabled && g.d_pair_probs.size() > 0) {
      auto [da, db] = pair_head_.backward(pair_cache_, g.d_pair_probs, g.pair_head_trainable);
      for (std::size_t p = 0; p < pairs_.size(); ++p) {
        spread(d_mid, pairs_[p].first, da.row(static_cast<Eigen::Index>(p)));
        spread(d_mid, pairs_[p].second, db.row(static_cast<Eigen::Index>(p)));
      }
    }

    if (cfg_.rsg.enabled && last_generated_ > 0) {
      Shape gs = mid_shape_;
      gs.n = static_cast<std::size_t>(last_generated_);
      Tensor d_t = g.d_transformed.size() > 0 ? g.d_transformed : Tensor(gs);
      if (g.d_gen_pair_probs.size() > 0) {
        auto [da, db] = pair_head_.backward(gen_pair_cache_, g.d_gen_pair_probs, false);
        (void)db;
        for (int k = 0; k < last_generated_; ++k)
          spread(d_t, static_cast<std::size_t>(k), da.row(k));
      }
      transform_.backward(last_freq_fd_, d_t);
    }

    Tensor d_real = d_mid.rows(0, real_n_);
    for (std::size_t k = real_n_; k < n_aug; ++k) {
      const auto src = d_mid.sample(k);
      auto dst = d_real.sample(gen_rare_index_[k - real_n_]);
      for (std::size_t e = 0; e < src.size(); ++e)
        dst[e] += src[e];
    }
    front_.backward(d_real);
  }

  /// Deterministic, generation-free inference in chunks.
  EvalOutput evaluate(const Tensor &x, std::size_t chunk = 256) const {
    EvalOutput out;
    const std::size_t n = x.shape().n;
    out.logits.resize(static_cast<Eigen::Index>(n), cfg_.num_classes);
    for (std::size_t first = 0; first < n; first += chunk) {
      const std::size_t m = std::min(chunk, n - first);
      const Tensor mid = front_.infer(x.rows(first, m));
      const Tensor feat = nn::global_avg_pool(back_.infer(mid));
      const Matrix f = feat.as_matrix();
      if (out.features.size() == 0)
        out.features.resize(static_cast<Eigen::Index>(n), f.cols());
      out.features.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(m)) = f;
      out.logits.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(m)) =
          classify(f);
    }
    return out;
  }

  Matrix forward_eval(const Tensor &x) const { return evaluate(x).logits; }

private:
  static Vector clamp_probs(const Vector &p) {
    return p.cwiseMax(1e-12).cwiseMin(1.0 - 1e-12);
  }

  Matrix pooled_rows(const Tensor &mid) const {
    return nn::global_avg_pool(mid).as_matrix();
  }

  PairHead::Cache pair_forward(const Tensor &mid, std::span<const int> labels, RsgAux &aux,
                               std::mt19937_64 &rng) {
    std::vector<std::size_t> order(mid.shape().n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    pairs_.clear();
    for (std::size_t p = 0; p + 1 < order.size(); p += 2)
      pairs_.emplace_back(order[p], order[p + 1]);
    const Matrix pooled = pooled_rows(mid);
    Matrix a(static_cast<Eigen::Index>(pairs_.size()), pooled.cols());
    Matrix b(static_cast<Eigen::Index>(pairs_.size()), pooled.cols());
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      a.row(static_cast<Eigen::Index>(p)) = pooled.row(static_cast<Eigen::Index>(pairs_[p].first));
      b.row(static_cast<Eigen::Index>(p)) = pooled.row(static_cast<Eigen::Index>(pairs_[p].second));
      aux.pair_targets.push_back(labels[pairs_[p].first] == labels[pairs_[p].second] ? 1 : 0);
    }
    aux.pairs = pairs_;
    PairHead::Cache cache = pair_head_.forward(a, b);
    aux.pair_probs = clamp_probs(cache.probs);
    return cache;
  }

  void head_forward(const Tensor &mid, ForwardOutput &out) {
    const Tensor back_out = back_.forward(mid);
    back_out_shape_ = back_out.shape();
    const Tensor feat = nn::global_avg_pool(back_out);
    if (!feat.all_finite())
      throw NumericalError("non-finite activation after global average pooling");
    feat_ = feat.as_matrix();
    const Tensor proj = proj_.forward(feat);
    emb_ = nn::RowNormalizer::apply(proj.as_matrix(), &emb_norms_);
    if (cfg_.classifier == ClassifierKind::Cosine) {
      feat_hat_ = nn::RowNormalizer::apply(feat_, &feat_norms_);
      w_hat_ = nn::RowNormalizer::apply(cls_weights(), &w_norms_);
    }
    out.features = feat_;
    out.embeddings = emb_;
    out.logits = classify(feat_);
    if (!out.logits.allFinite())
      throw NumericalError("non-finite activation in the classifier");
    gen_rare_index_ = out.aux.rare_index;
    last_freq_fd_ = out.aux.freq_fd;
  }

  Matrix classify(const Matrix &f) const {
    if (cfg_.classifier == ClassifierKind::Cosine) {
      const Matrix fh = nn::RowNormalizer::apply(f);
      const Matrix wh = nn::RowNormalizer::apply(cls_weights());
      return (fh * wh.transpose()).cwiseMax(-1.0).cwiseMin(1.0);
    }
    Matrix z = f * cls_weights().transpose();
    z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(cls_bias_.value.data(), cfg_.num_classes);
    return z;
  }

  Matrix classifier_backward(const Matrix &d_logits) {
    const auto k = static_cast<Eigen::Index>(cfg_.num_classes);
    const auto d = feat_.cols();
    MatrixMap dw(cls_weight_.grad.data(), k, d);
    if (cfg_.classifier == ClassifierKind::Cosine) {
      const Matrix d_fh = d_logits * w_hat_;
      const Matrix d_wh = d_logits.transpose() * feat_hat_;
      dw += nn::RowNormalizer::backward(d_wh, w_hat_, w_norms_);
      return nn::RowNormalizer::backward(d_fh, feat_hat_, feat_norms_);
    }
    dw += d_logits.transpose() * feat_;
    Eigen::Map<Eigen::RowVectorXd>(cls_bias_.grad.data(), k) += d_logits.colwise().sum();
    return d_logits * cls_weights();
  }

  ConstMatrixMap cls_weights() const {
    return {cls_weight_.value.data(), static_cast<Eigen::Index>(cfg_.num_classes),
            static_cast<Eigen::Index>(cls_weight_.value.size() / static_cast<std::size_t>(cfg_.num_classes))};
  }

  NetworkConfig cfg_;
  nn::Sequential front_, back_, proj_;
  nn::Buffer cls_weight_, cls_bias_;
  Shape mid_shape_;

  ClassCenters centers_;
  std::vector<double> centers_grad_;
  PairHead pair_head_;
  VectorTransform transform_;
  RareFreqPartition partition_;
  bool centers_ready_ = false;

  // forward caches
  std::size_t real_n_ = 0;
  int last_generated_ = 0;
  Shape back_out_shape_;
  Matrix feat_, emb_, feat_hat_, w_hat_;
  Vector emb_norms_, feat_norms_, w_norms_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  PairHead::Cache pair_cache_, gen_pair_cache_;
  std::vector<std::size_t> gen_rare_index_;
  Tensor last_freq_fd_;
};

} // namespace ltr
