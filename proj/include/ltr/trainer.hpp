// SPDX-License-Identifier: Apache-2.0
/**
 * @file   trainer.hpp
 * @brief  Learning-rate schedules, momentum SGD, the composite training step
 *         and one-epoch training/evaluation passes.
 *
 * Epoch indices handed to the trainer are 0-based. The generator phase rule
 * uses the 1-based epoch number, so `t_th` counts whole center-estimation
 * epochs: with t_th = 100, epochs 1..100 estimate centers and generation
 * starts in epoch 101.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltr/losses.hpp"
#include "ltr/lt_data.hpp"
#include "ltr/metrics.hpp"
#include "ltr/model.hpp"
#include "ltr/rsg.hpp"

namespace ltr {

enum class Schedule { Cosine, Step, CosineWarmRestarts };

struct LdamConfig {
  double max_m = 0.5;
  double s = 30.0;
  bool margins = true; ///< false gives zero margins (plain CE when s = 1)
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 32;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int warmup_epochs = 5;
  Schedule schedule = Schedule::Cosine;
  std::vector<int> step_milestones{160, 180};
  double step_factor = 0.1;
  int restart_period = 10;
  int t_th = 100;
  LossWeights loss_weights{6.299, 0.709, 1e-5, 1e-6};
  SCLConfig scl;
  LdamConfig ldam;
  std::uint64_t seed = 0;
  int checkpoint_every = 0; ///< 0 writes only last/best checkpoints

  void validate() const {
    if (epochs < 0)
      throw ConfigError("epochs must be non-negative");
    if (batch_size < 2)
      throw ConfigError("batch_size must be at least 2");
    if (!(base_lr > 0.0) || momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0)
      throw ConfigError("optimizer needs base_lr > 0, momentum in [0, 1), weight_decay >= 0");
    if (warmup_epochs < 0 || restart_period < 1)
      throw ConfigError("warmup_epochs must be >= 0 and restart_period >= 1");
    if (t_th < 0 || t_th > epochs)
      throw ConfigError("t_th must lie in [0, epochs]");
    for (std::size_t i = 0; i < step_milestones.size(); ++i) {
      if (step_milestones[i] >= epochs || step_milestones[i] < 0)
        throw ConfigError("step milestones must lie in [0, epochs)");
      if (i > 0 && step_milestones[i] <= step_milestones[i - 1])
        throw ConfigError("step milestones must be strictly increasing");
    }
    if (!(step_factor > 0.0))
      throw ConfigError("step_factor must be positive");
    if (!(scl.tau > 0.0))
      throw ConfigError("scl tau must be positive");
    if (!(ldam.max_m > 0.0) || !(ldam.s > 0.0))
      throw ConfigError("ldam max_m and s must be positive");
    loss_weights.validate();
  }
};

/**
 * Linear per-epoch warmup to base_lr, then cosine annealing towards zero over
 * the remaining epochs (or step / warm-restart variants), multiplied by
 * step_factor for every milestone already reached.
 */
inline double lr_schedule(int epoch, const TrainConfig &cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw std::invalid_argument("epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(cfg.epochs) + ")");
  if (epoch < cfg.warmup_epochs)
    return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs;

  const double pi = std::acos(-1.0);
  const int since = epoch - cfg.warmup_epochs;
  double lr = cfg.base_lr;
  switch (cfg.schedule) {
  case Schedule::Cosine:
    lr *= 0.5 * (1.0 + std::cos(pi * since / (cfg.epochs - cfg.warmup_epochs)));
    break;
  case Schedule::CosineWarmRestarts:
    lr *= 0.5 * (1.0 + std::cos(pi * (since % cfg.restart_period) / cfg.restart_period));
    break;
  case Schedule::Step:
    break;
  }
  for (int m : cfg.step_milestones)
    if (epoch >= m)
      lr *= cfg.step_factor;
  return lr;
}

/// SGD with momentum and coupled L2 weight decay (decay skipped where ParamRef::decay is false).
class Sgd {
public:
  void step(const std::vector<ParamRef> &params, double lr, double momentum, double weight_decay) {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (const auto &p : params)
        velocity_.emplace_back(p.value.size(), 0.0);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto &p = params[k];
      auto &v = velocity_[k];
      const double wd = p.decay ? weight_decay : 0.0;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i] + wd * p.value[i];
        v[i] = momentum * v[i] + g;
        p.value[i] -= lr * v[i];
      }
    }
  }

  std::vector<std::vector<double>> &velocity() { return velocity_; }
  const std::vector<std::vector<double>> &velocity() const { return velocity_; }

private:
  std::vector<std::vector<double>> velocity_;
};

struct StepStats {
  LossParts parts;
  double total = 0.0;
  int generated = 0;
};

/// Everything the objective needs besides the model and the batch.
struct Objective {
  TrainConfig train;
  MarginTable margins;
};

inline Objective make_objective(const TrainConfig &cfg, const std::vector<int> &train_counts) {
  Objective o{cfg, {}};
  o.margins = cfg.ldam.margins ? ldam_margins(train_counts, cfg.ldam.max_m, cfg.ldam.s)
                               : zero_margins(train_counts.size(), cfg.ldam.s);
  return o;
}

/**
 * Forward, weighted losses, backward and one optimizer update. `epoch` is
 * 0-based; the phase rule sees epoch + 1.
 */
inline StepStats train_step(Model &model, Sgd &opt, const Batch &batch, int epoch, double lr,
                            const Objective &obj, std::mt19937_64 &rng) {
  const TrainConfig &cfg = obj.train;
  const LossWeights &w = cfg.loss_weights;
  const int phase_epoch = epoch + 1;
  model.zero_grad();
  ForwardOutput fwd = model.forward_train(batch.inputs, batch.labels, phase_epoch, cfg.t_th, rng);

  StepStats stats;
  StepGrads grads;
  stats.generated = fwd.aux.generated;

  const LossGrad scl = scl_loss(fwd.embeddings, fwd.labels, cfg.scl);
  stats.parts.scl = scl.value;
  grads.d_embeddings = w.alpha * scl.grad;

  const LossGrad ldam = ldam_loss(fwd.logits, fwd.labels, obj.margins);
  stats.parts.ldam = ldam.value;
  grads.d_logits = w.lambda * ldam.grad;

  if (model.rsg_enabled()) {
    const auto &aux = fwd.aux;
    const std::vector<double> probs(aux.pair_probs.data(),
                                    aux.pair_probs.data() + aux.pair_probs.size());
    const CescResult cesc = cesc_loss(fwd.mid, fwd.labels, model.centers(), aux.gamma, probs,
                                      aux.pair_targets, phase_epoch, cfg.t_th);
    stats.parts.cesc = cesc.value;
    grads.d_mid = cesc.grad_features;
    for (double &g : grads.d_mid.vec())
      g *= w.eta;
    auto cg = model.centers_grad();
    for (std::size_t i = 0; i < cg.size(); ++i)
      cg[i] += w.eta * cesc.grad_centers[i];
    grads.d_pair_probs = w.eta * Eigen::Map<const Vector>(cesc.grad_pair_probs.data(),
                                                          static_cast<Eigen::Index>(cesc.grad_pair_probs.size()));
    grads.pair_head_trainable = phase_epoch <= cfg.t_th;

    if (aux.generated > 0) {
      const std::vector<double> gp(aux.gen_pair_probs.data(),
                                   aux.gen_pair_probs.data() + aux.gen_pair_probs.size());
      const MvResult mv = mv_loss(aux.transformed_fd, aux.rare_fd, aux.freq_fd, gp);
      stats.parts.mv = mv.value;
      grads.d_transformed = mv.grad_transformed;
      for (double &g : grads.d_transformed.vec())
        g *= w.mu;
      grads.d_gen_pair_probs = w.mu * Eigen::Map<const Vector>(mv.grad_pair_probs.data(),
                                                               static_cast<Eigen::Index>(mv.grad_pair_probs.size()));
    }
  }

  try {
    stats.total = total_loss(stats.parts, w, phase_epoch, cfg.t_th);
  } catch (const NumericalError &) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch << ": scl=" << stats.parts.scl
        << " ldam=" << stats.parts.ldam << " cesc=" << stats.parts.cesc
        << " mv=" << stats.parts.mv << " lr=" << lr << " generated=" << stats.generated;
    throw NumericalError(msg.str());
  }

  model.backward(grads);
  opt.step(model.params(), lr, cfg.momentum, cfg.weight_decay);
  return stats;
}

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  LossParts parts; ///< batch means
  double total = 0.0;
  int generated = 0;
  std::size_t batches = 0;
};

/**
 * Features of the front stage for the whole split, computed without caching.
 * Batch norm sees batch statistics over a seeded shuffle in near-equal chunks,
 * so no chunk is a single class or a lone sample.
 */
inline Tensor front_features(const Model &model, const DatasetSplit &split, std::uint64_t seed,
                             std::size_t chunk = 256) {
  const std::size_t n = split.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, 0xfea7);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t pieces = std::max<std::size_t>(1, (n + chunk - 1) / chunk);
  Tensor out;
  for (std::size_t p = 0; p < pieces; ++p) {
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(p * n / pieces),
                                       order.begin() + static_cast<std::ptrdiff_t>((p + 1) * n / pieces));
    if (idx.empty())
      continue;
    const Tensor mid = model.infer_mid_batch_stats(split.gather(idx).inputs);
    if (out.size() == 0) {
      Shape s = mid.shape();
      s.n = n;
      out = Tensor(s);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto src = mid.sample(k);
      std::copy(src.begin(), src.end(), out.sample(idx[k]).begin());
    }
  }
  return out;
}

/// Sets the rare/frequent partition and, on first use, k-means initialises the centers.
inline void prepare_rsg(Model &model, const DatasetSplit &train, std::uint64_t seed) {
  if (!model.rsg_enabled())
    return;
  const RsgConfig &rc = model.config().rsg;
  model.partition() = make_partition(train.class_counts(), rc.rare_rule, rc.rare_fraction);
  if (!model.centers_ready()) {
    init_centers_kmeans(model.centers(), front_features(model, train, seed), train.labels, seed);
    model.set_centers_ready(true);
  }
}

inline EpochStats train_epoch(Model &model, Sgd &opt, const DatasetSplit &train, int epoch,
                              const Objective &obj) {
  const TrainConfig &cfg = obj.train;
  EpochStats s;
  s.epoch = epoch;
  s.lr = lr_schedule(epoch, cfg);
  BatchIterator it(train, static_cast<std::size_t>(cfg.batch_size), cfg.seed, epoch);
  std::uint32_t b = 0;
  while (auto batch = it.next()) {
    auto rng = make_rng(cfg.seed, 0x57e9, static_cast<std::uint32_t>(epoch), b++);
    const StepStats st = train_step(model, opt, *batch, epoch, s.lr, obj, rng);
    s.parts.scl += st.parts.scl;
    s.parts.ldam += st.parts.ldam;
    s.parts.cesc += st.parts.cesc;
    s.parts.mv += st.parts.mv;
    s.total += st.total;
    s.generated += st.generated;
    ++s.batches;
  }
  if (s.batches > 0) {
    const double inv = 1.0 / static_cast<double>(s.batches);
    s.parts.scl *= inv;
    s.parts.ldam *= inv;
    s.parts.cesc *= inv;
    s.parts.mv *= inv;
    s.total *= inv;
  }
  return s;
}

inline MetricsReport evaluate_split(const Model &model, const DatasetSplit &split,
                                    const std::vector<int> &train_counts, int epoch) {
  if (split.size() == 0)
    throw std::invalid_argument("cannot evaluate an empty split");
  if (split.classes != model.config().num_classes)
    throw ConfigError("model predicts " + std::to_string(model.config().num_classes) +
                      " classes but the data has " + std::to_string(split.classes));
  const Batch all = split.all();
  const EvalOutput ev = model.evaluate(all.inputs);
  return make_report(ev.logits, ev.features, all.labels, train_counts, epoch);
}

struct EpochRecord {
  EpochStats stats;
  MetricsReport metrics;
};

inline nlohmann::json to_json(const EpochRecord &r) {
  const auto &s = r.stats;
  return {{"epoch", s.epoch},
          {"lr", s.lr},
          {"loss", {{"scl", s.parts.scl}, {"ldam", s.parts.ldam}, {"cesc", s.parts.cesc},
                    {"mv", s.parts.mv}, {"total", s.total}}},
          {"generated", s.generated},
          {"batches", s.batches},
          {"metrics", to_json(r.metrics)}};
}

inline EpochRecord epoch_record_from_json(const nlohmann::json &j) {
  EpochRecord r;
  r.stats.epoch = j.at("epoch").get<int>();
  r.stats.lr = j.at("lr").get<double>();
  const auto &l = j.at("loss");
  r.stats.parts = {l.at("scl").get<double>(), l.at("ldam").get<double>(),
                   l.at("cesc").get<double>(), l.at("mv").get<double>()};
  r.stats.total = l.at("total").get<double>();
  r.stats.generated = j.at("generated").get<int>();
  r.stats.batches = j.at("batches").get<std::size_t>();
  r.metrics = report_from_json(j.at("metrics"));
  return r;
}

namespace detail {
inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}
inline std::string csv_optional(const std::optional<double> &v) {
  return v ? csv_number(*v) : std::string();
}
} // namespace detail

/// Per-epoch history, epochs numbered from 1; empty groups leave their cell blank.
inline std::string history_csv(const std::vector<EpochRecord> &history) {
  using detail::csv_number, detail::csv_optional;
  std::string out =
      "epoch,lr,loss_scl,loss_ldam,loss_cesc,loss_mv,loss_total,generated,overall,many,medium,"
      "few,avg_icd\n";
  for (const auto &r : history) {
    const auto &s = r.stats;
    const auto &m = r.metrics;
    out += std::to_string(s.epoch + 1) + "," + csv_number(s.lr) + "," + csv_number(s.parts.scl) + "," +
           csv_number(s.parts.ldam) + "," + csv_number(s.parts.cesc) + "," +
           csv_number(s.parts.mv) + "," + csv_number(s.total) + "," + std::to_string(s.generated) +
           "," + csv_number(m.overall_top1) + "," + csv_optional(m.group_top1.many) + "," +
           csv_optional(m.group_top1.medium) + "," + csv_optional(m.group_top1.few) + "," +
           csv_number(m.avg_icd) + "\n";
  }
  return out;
}

} // namespace ltr
