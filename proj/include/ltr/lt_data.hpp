// SPDX-License-Identifier: Apache-2.0
/**
 * @file   lt_data.hpp
 * @brief  Long-tailed split construction by exponential down-sampling,
 *         Many/Medium/Few grouping, synthetic Gaussian tasks and
 *         deterministic mini-batch iteration.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltr/tensor.hpp"

namespace ltr {

/**
 * Class sizes of an exponentially imbalanced profile. `counts[r]` is the size
 * of the class ranked r (rank 0 is the largest class); `class_order[r]` maps
 * ranks to class labels.
 */
struct LongTailSpec {
  int num_classes = 0;
  int n_max = 0;
  double beta = 1.0;
  std::vector<int> counts;
  std::vector<int> class_order;

  /// Counts indexed by class label instead of rank.
  std::vector<int> counts_by_class() const {
    std::vector<int> out(counts.size(), 0);
    for (std::size_t r = 0; r < counts.size(); ++r)
      out[static_cast<std::size_t>(class_order[r])] = counts[r];
    return out;
  }
};

/// n_j = floor(n_max * beta^(-j / (K - 1))), truncated toward zero.
inline std::vector<int> exponential_counts(int n_max, double beta, int num_classes) {
  if (num_classes < 1)
    throw ConfigError("num_classes must be at least 1");
  if (n_max < 1)
    throw ConfigError("n_max must be positive");
  if (!(beta >= 1.0) || !std::isfinite(beta))
    throw ConfigError("imbalance factor beta must be >= 1, got " + std::to_string(beta));
  if (num_classes == 1)
    return {n_max};
  if (std::floor(n_max / beta) < 1.0)
    throw ConfigError("n_max / beta leaves the smallest class empty");

  std::vector<int> counts(static_cast<std::size_t>(num_classes));
  for (int j = 0; j < num_classes; ++j) {
    const double exponent = -static_cast<double>(j) / static_cast<double>(num_classes - 1);
    // The relative nudge keeps exact integers such as 5000 * 100^-1 from
    // landing one ulp below and truncating to 49.
    const double value = static_cast<double>(n_max) * std::pow(beta, exponent);
    counts[static_cast<std::size_t>(j)] = static_cast<int>(std::floor(value * (1.0 + 1e-12)));
  }
  counts.back() = static_cast<int>(std::floor(n_max / beta * (1.0 + 1e-12)));
  return counts;
}

inline LongTailSpec make_longtail_spec(int n_max, double beta, int num_classes,
                                       std::vector<int> class_order = {}) {
  LongTailSpec spec;
  spec.num_classes = num_classes;
  spec.n_max = n_max;
  spec.beta = beta;
  spec.counts = exponential_counts(n_max, beta, num_classes);
  if (class_order.empty()) {
    class_order.resize(static_cast<std::size_t>(num_classes));
    std::iota(class_order.begin(), class_order.end(), 0);
  }
  if (class_order.size() != static_cast<std::size_t>(num_classes))
    throw ConfigError("class_order must list every class exactly once");
  std::vector<int> sorted = class_order;
  std::sort(sorted.begin(), sorted.end());
  for (int j = 0; j < num_classes; ++j)
    if (sorted[static_cast<std::size_t>(j)] != j)
      throw ConfigError("class_order must be a permutation of 0..num_classes-1");
  spec.class_order = std::move(class_order);
  return spec;
}

/// Many (> 100), Medium (20..100 inclusive) and Few (< 20) shot class groups.
struct ShotGroups {
  std::vector<int> many, medium, few;
};

inline ShotGroups group_classes(const std::vector<int> &counts) {
  ShotGroups g;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    const int n = counts[j];
    const int id = static_cast<int>(j);
    if (n > 100)
      g.many.push_back(id);
    else if (n >= 20)
      g.medium.push_back(id);
    else
      g.few.push_back(id);
  }
  return g;
}

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Anything that can hand out labelled samples by index.
template <typename S>
concept SampleSource = requires(const S &s, std::size_t i, float *out) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s.label(i) } -> std::convertible_to<int>;
  { s.sample_shape() } -> std::convertible_to<Shape>;
  { s.num_classes() } -> std::convertible_to<int>;
  s.copy_sample(i, out);
};

/// Materialised samples (stored as float) with their labels and provenance ids.
struct DatasetSplit {
  Shape shape{1, 0, 1, 1};
  int classes = 0;
  std::vector<float> inputs;
  std::vector<int> labels;
  std::vector<std::int64_t> source_ids;
  std::vector<std::vector<std::size_t>> per_class_index;
  LongTailSpec spec;

  std::size_t size() const { return labels.size(); }
  int label(std::size_t i) const { return labels[i]; }
  Shape sample_shape() const { return shape; }
  int num_classes() const { return classes; }
  void copy_sample(std::size_t i, float *out) const {
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(i * shape.sample_size()),
                shape.sample_size(), out);
  }

  std::vector<int> class_counts() const {
    std::vector<int> out(static_cast<std::size_t>(classes), 0);
    for (int y : labels)
      ++out[static_cast<std::size_t>(y)];
    return out;
  }

  void push_back(std::span<const float> sample, int label, std::int64_t id) {
    inputs.insert(inputs.end(), sample.begin(), sample.end());
    labels.push_back(label);
    source_ids.push_back(id);
  }

  void rebuild_index() {
    per_class_index.assign(static_cast<std::size_t>(classes), {});
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int y = labels[i];
      if (y < 0 || y >= classes)
        throw ConfigError("label " + std::to_string(y) + " outside [0, " +
                          std::to_string(classes) + ")");
      per_class_index[static_cast<std::size_t>(y)].push_back(i);
    }
  }

  Batch gather(std::span<const std::size_t> idx) const {
    Batch b;
    Shape s = shape;
    s.n = idx.size();
    b.inputs = Tensor(s);
    const std::size_t stride = shape.sample_size();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const float *src = inputs.data() + idx[k] * stride;
      double *dst = b.inputs.data() + k * stride;
      for (std::size_t e = 0; e < stride; ++e)
        dst[e] = static_cast<double>(src[e]);
      b.labels.push_back(labels[idx[k]]);
    }
    b.indices.assign(idx.begin(), idx.end());
    return b;
  }

  Batch all() const {
    std::vector<std::size_t> idx(size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return gather(idx);
  }
};

/**
 * Uniform per-class subsample without replacement. The class ranked r keeps
 * `spec.counts[r]` samples; kept samples stay in source order.
 */
template <SampleSource Source>
DatasetSplit build_longtail_split(const Source &source, const LongTailSpec &spec,
                                  std::uint64_t seed) {
  if (spec.num_classes != source.num_classes())
    throw ConfigError("long-tail spec has " + std::to_string(spec.num_classes) +
                      " classes but the source has " + std::to_string(source.num_classes()));
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(spec.num_classes));
  for (std::size_t i = 0; i < source.size(); ++i) {
    const int y = source.label(i);
    if (y < 0 || y >= spec.num_classes)
      throw ConfigError("source label " + std::to_string(y) + " out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }

  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < spec.counts.size(); ++r) {
    const int cls = spec.class_order[r];
    auto &pool = by_class[static_cast<std::size_t>(cls)];
    const auto want = static_cast<std::size_t>(spec.counts[r]);
    if (pool.size() < want)
      throw ConfigError("class " + std::to_string(cls) + " has " + std::to_string(pool.size()) +
                        " samples but the long-tail profile needs " + std::to_string(want));
    auto rng = make_rng(seed, 0x5eed, static_cast<std::uint32_t>(cls));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(want);
    keep.insert(keep.end(), pool.begin(), pool.end());
  }
  std::sort(keep.begin(), keep.end());

  DatasetSplit out;
  out.shape = source.sample_shape();
  out.shape.n = 1;
  out.classes = spec.num_classes;
  out.spec = spec;
  std::vector<float> buf(out.shape.sample_size());
  out.inputs.reserve(keep.size() * buf.size());
  for (std::size_t i : keep) {
    source.copy_sample(i, buf.data());
    out.push_back(buf, source.label(i), static_cast<std::int64_t>(i));
  }
  out.rebuild_index();
  return out;
}

struct SyntheticTaskConfig {
  int num_classes = 10;
  int feature_dim = 8;
  double class_separation = 3.0;
  double within_class_std = 1.0;
  int test_per_class = 100;
  LongTailSpec spec;
  std::uint64_t seed = 0;
};

struct SyntheticTask {
  DatasetSplit train;
  DatasetSplit test;
  Matrix means;
};

/**
 * Class means with minimum pairwise distance `separation`: scaled basis
 * vectors e_0..e_{d-1}, then -e_0.. while 2*dim suffices, otherwise points on
 * a circle in the first two coordinates.
 */
inline Matrix synthetic_class_means(int num_classes, int dim, double separation) {
  Matrix means = Matrix::Zero(num_classes, dim);
  if (num_classes <= 2 * dim) {
    const double r = separation / std::sqrt(2.0);
    for (int j = 0; j < num_classes; ++j)
      means(j, j % dim) = j < dim ? r : -r;
  } else {
    const double pi = std::acos(-1.0);
    const double r = separation / (2.0 * std::sin(pi / num_classes));
    for (int j = 0; j < num_classes; ++j) {
      means(j, 0) = r * std::cos(2.0 * pi * j / num_classes);
      means(j, 1) = r * std::sin(2.0 * pi * j / num_classes);
    }
  }
  return means;
}

inline SyntheticTask synth_gaussian_task(const SyntheticTaskConfig &cfg) {
  if (cfg.feature_dim < 2)
    throw ConfigError("synthetic feature_dim must be >= 2");
  if (!(cfg.class_separation > 0.0) || !(cfg.within_class_std > 0.0))
    throw ConfigError("class_separation and within_class_std must be positive");
  if (cfg.num_classes < 1 || cfg.spec.num_classes != cfg.num_classes)
    throw ConfigError("synthetic task class count disagrees with its long-tail spec");
  if (cfg.test_per_class < 1)
    throw ConfigError("test_per_class must be positive");

  SyntheticTask task;
  task.means = synthetic_class_means(cfg.num_classes, cfg.feature_dim, cfg.class_separation);
  const Shape shape{1, static_cast<std::size_t>(cfg.feature_dim), 1, 1};

  auto draw = [&](int per_class, std::uint32_t stream) {
    DatasetSplit s;
    s.shape = shape;
    s.classes = cfg.num_classes;
    auto rng = make_rng(cfg.seed, stream);
    std::normal_distribution<double> noise(0.0, cfg.within_class_std);
    std::vector<float> buf(shape.sample_size());
    std::int64_t id = 0;
    for (int y = 0; y < cfg.num_classes; ++y)
      for (int k = 0; k < per_class; ++k) {
        for (int d = 0; d < cfg.feature_dim; ++d)
          buf[static_cast<std::size_t>(d)] = static_cast<float>(task.means(y, d) + noise(rng));
        s.push_back(buf, y, id++);
      }
    s.rebuild_index();
    return s;
  };

  const DatasetSplit pool = draw(cfg.spec.n_max, 1);
  task.train = build_longtail_split(pool, cfg.spec, cfg.seed);
  task.test = draw(cfg.test_per_class, 2);
  task.test.spec = make_longtail_spec(cfg.test_per_class, 1.0, cfg.num_classes);
  return task;
}

/**
 * Instance-uniform shuffled mini-batches for one epoch. The permutation is a
 * function of (seed, epoch); a trailing batch with fewer than two samples is
 * dropped.
 */
class BatchIterator {
public:
  BatchIterator(const DatasetSplit &split, std::size_t batch_size, std::uint64_t seed, int epoch)
      : split_(&split), batch_size_(batch_size) {
    if (batch_size < 2)
      throw ConfigError("batch_size must be at least 2");
    order_.resize(split.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    auto rng = make_rng(seed, 0xba7c, static_cast<std::uint32_t>(epoch));
    std::shuffle(order_.begin(), order_.end(), rng);
  }

  std::size_t num_batches() const {
    const std::size_t full = order_.size() / batch_size_;
    return full + (order_.size() % batch_size_ >= 2 ? 1 : 0);
  }

  std::optional<Batch> next() {
    if (cursor_ >= order_.size())
      return std::nullopt;
    const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
    if (n < 2) {
      cursor_ = order_.size();
      return std::nullopt;
    }
    std::span<const std::size_t> idx(order_.data() + cursor_, n);
    cursor_ += n;
    return split_->gather(idx);
  }

  const std::vector<std::size_t> &order() const { return order_; }

private:
  const DatasetSplit *split_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

inline nlohmann::json spec_to_json(const LongTailSpec &spec) {
  return {{"num_classes", spec.num_classes},
          {"n_max", spec.n_max},
          {"beta", spec.beta},
          {"counts", spec.counts},
          {"class_order", spec.class_order}};
}

inline LongTailSpec spec_from_json(const nlohmann::json &j) {
  LongTailSpec spec = make_longtail_spec(j.at("n_max").get<int>(), j.at("beta").get<double>(),
                                         j.at("num_classes").get<int>(),
                                         j.value("class_order", std::vector<int>{}));
  if (j.contains("counts") && j.at("counts").get<std::vector<int>>() != spec.counts)
    throw ConfigError("manifest counts do not match the exponential profile");
  return spec;
}

/// Split manifest: the profile, the seed and the kept source ids per class.
inline nlohmann::json split_manifest(const DatasetSplit &split, std::uint64_t seed) {
  std::vector<std::vector<std::int64_t>> ids(static_cast<std::size_t>(split.classes));
  for (std::size_t i = 0; i < split.size(); ++i)
    ids[static_cast<std::size_t>(split.labels[i])].push_back(split.source_ids[i]);
  const ShotGroups g = group_classes(split.class_counts());
  return {{"format", "ltr-split-manifest"},
          {"version", 1},
          {"seed", seed},
          {"spec", spec_to_json(split.spec)},
          {"class_counts", split.class_counts()},
          {"groups", {{"many", g.many}, {"medium", g.medium}, {"few", g.few}}},
          {"per_class_ids", ids}};
}

} // namespace ltr
