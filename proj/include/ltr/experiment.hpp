// SPDX-License-Identifier: Apache-2.0
/**
 * @file   experiment.hpp
 * @brief  Data resolution, the resumable fit loop with its on-disk artifacts,
 *         GA fine-tune fitness, and checkpoint evaluation.
 *
 * Files written by fit into the run directory:
 *   checkpoint_last.ltr, checkpoint_best.ltr, checkpoint_epoch_NNNN.ltr
 *   history.csv, metrics.json, icd_table.md, accuracy.svg, losses.svg
 *   run_meta.json (the only file carrying a timestamp)
 */
#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>

#include "ltr/checkpoint.hpp"
#include "ltr/config.hpp"
#include "ltr/dataset_io.hpp"
#include "ltr/ga.hpp"
#include "ltr/plot.hpp"
#include "ltr/trainer.hpp"

namespace ltr {

namespace fs = std::filesystem;

struct ExperimentData {
  DatasetSplit train;
  DatasetSplit test;
};

inline int default_n_max(const ExperimentConfig &c) {
  switch (c.task) {
  case Task::Cifar10: return 5000;
  case Task::Cifar100: return 500;
  case Task::Synthetic: return 500;
  case Task::Arrays: return 0;
  }
  return 0;
}

inline LongTailSpec train_spec(const ExperimentConfig &c, int classes) {
  const int n_max = c.longtail.n_max > 0 ? c.longtail.n_max : default_n_max(c);
  return make_longtail_spec(n_max, c.longtail.beta, classes, c.data.class_order);
}

namespace detail {

inline json read_json_file(const fs::path &p) {
  std::ifstream in(p);
  if (!in)
    throw io::IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw io::IoError(p.string() + " is not valid JSON: " + e.what());
  }
}

inline void write_text(const fs::path &p, const std::string &text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out)
    throw io::IoError("cannot write " + p.string());
  out << text;
  if (!out)
    throw io::IoError("failed writing " + p.string());
}

template <SampleSource Source>
DatasetSplit long_tail_or_manifest(const Source &src, const ExperimentConfig &c) {
  if (!c.data.manifest.empty())
    return io::apply_manifest(src, read_json_file(c.data.manifest));
  return build_longtail_split(src, train_spec(c, src.num_classes()), c.seed);
}

/// Every sample of a source, in source order.
template <SampleSource Source> DatasetSplit full_split(const Source &src) {
  DatasetSplit out;
  out.shape = src.sample_shape();
  out.shape.n = 1;
  out.classes = src.num_classes();
  std::vector<float> buf(out.shape.sample_size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    src.copy_sample(i, buf.data());
    out.push_back(buf, src.label(i), static_cast<std::int64_t>(i));
  }
  out.rebuild_index();
  return out;
}

} // namespace detail

/// Resolves the train (long-tailed) and balanced test splits; `with_test` false skips the test set.
inline ExperimentData load_data(const ExperimentConfig &c, bool with_test = true) {
  ExperimentData d;
  switch (c.task) {
  case Task::Synthetic: {
    if (!c.data.manifest.empty())
      throw ConfigError("synthetic tasks regenerate their split from the seed; data.manifest is not used");
    SyntheticTaskConfig sc;
    sc.num_classes = c.synthetic.num_classes;
    sc.feature_dim = c.synthetic.feature_dim;
    sc.class_separation = c.synthetic.class_separation;
    sc.within_class_std = c.synthetic.within_class_std;
    sc.test_per_class = c.synthetic.test_per_class;
    sc.spec = train_spec(c, sc.num_classes);
    sc.seed = c.seed;
    auto task = synth_gaussian_task(sc);
    d.train = std::move(task.train);
    d.test = std::move(task.test);
    break;
  }
  case Task::Cifar10:
  case Task::Cifar100: {
    const int classes = c.task == Task::Cifar10 ? 10 : 100;
    d.train = detail::long_tail_or_manifest(io::CifarSource::load(c.data.root, classes, true), c);
    if (with_test)
      d.test = detail::full_split(io::CifarSource::load(c.data.root, classes, false));
    break;
  }
  case Task::Arrays: {
    const DatasetSplit full = io::load_split_dir(c.data.train_dir);
    if (!c.data.manifest.empty() || c.longtail.n_max > 0)
      d.train = detail::long_tail_or_manifest(full, c);
    else
      d.train = full;
    if (with_test)
      d.test = io::load_split_dir(c.data.test_dir, d.train.classes);
    break;
  }
  }
  return d;
}

inline NetworkConfig resolve_network(const ExperimentConfig &c, const DatasetSplit &train) {
  NetworkConfig net = c.network;
  net.input = train.shape;
  net.input.n = 1;
  net.num_classes = train.classes;
  net.validate();
  return net;
}

/// Throws when a model cannot consume the split (input shape or class count).
inline void check_compatible(const Model &model, const DatasetSplit &split) {
  const NetworkConfig &net = model.config();
  if (net.num_classes != split.classes)
    throw ConfigError("checkpoint predicts " + std::to_string(net.num_classes) +
                      " classes but the data has " + std::to_string(split.classes));
  Shape a = net.input, b = split.shape;
  a.n = b.n = 1;
  if (a.sample_size() != b.sample_size() || a.c != b.c || a.h != b.h || a.w != b.w)
    throw ConfigError("checkpoint expects inputs " + to_string(a) + " but the data has " + to_string(b));
}

struct FitOptions {
  bool resume = false;
  std::optional<int> stop_epoch; ///< run only up to this many completed epochs
  std::function<void(const EpochRecord &)> on_epoch;
};

struct FitResult {
  TrainingState state;
  MetricsReport final_report;
};

namespace detail {

/// Config keys that must agree between a checkpoint and the run resuming it.
inline json training_identity(const ExperimentConfig &c) {
  json j = config_to_json(c);
  j.erase("output_dir");
  j.erase("name");
  j.erase("ga");
  return j;
}

inline std::string timestamp_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_plots(const fs::path &dir, const std::vector<EpochRecord> &history) {
  plot::Series overall{"overall", {}, {}}, many{"many", {}, {}}, medium{"medium", {}, {}},
      few{"few", {}, {}};
  plot::Series scl{"SCL", {}, {}}, ldam{"LDAM", {}, {}}, cesc{"CESC", {}, {}}, mv{"MV", {}, {}},
      total{"total", {}, {}};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto &r : history) {
    const double e = r.stats.epoch + 1;
    const auto &g = r.metrics.group_top1;
    for (auto *s : {&overall, &many, &medium, &few, &scl, &ldam, &cesc, &mv, &total})
      s->x.push_back(e);
    overall.y.push_back(100.0 * r.metrics.overall_top1);
    many.y.push_back(g.many ? 100.0 * *g.many : nan);
    medium.y.push_back(g.medium ? 100.0 * *g.medium : nan);
    few.y.push_back(g.few ? 100.0 * *g.few : nan);
    scl.y.push_back(r.stats.parts.scl);
    ldam.y.push_back(r.stats.parts.ldam);
    cesc.y.push_back(r.stats.parts.cesc);
    mv.y.push_back(r.stats.parts.mv);
    total.y.push_back(r.stats.total);
  }
  write_text(dir / "accuracy.svg", plot::line_chart("Test top-1 accuracy", "epoch", "accuracy (%)",
                                                    {overall, many, medium, few}));
  write_text(dir / "losses.svg",
             plot::line_chart("Training loss parts", "epoch", "loss", {scl, ldam, cesc, mv, total}));
}

inline void write_run_meta(const fs::path &dir, const std::string &command, const json &extra = {}) {
  json meta = {{"command", command}, {"finished_at", timestamp_utc()}};
  if (extra.is_object())
    meta.update(extra);
  write_text(dir / "run_meta.json", meta.dump(2) + "\n");
}

} // namespace detail

/**
 * Trains from scratch (or from `checkpoint_last.ltr` when resuming), evaluating
 * on the test split after every epoch and writing the run artifacts.
 */
inline FitResult fit(const ExperimentConfig &cfg, const ExperimentData &data, const fs::path &dir,
                     const FitOptions &opts = {}) {
  cfg.validate();
  fs::create_directories(dir);
  const fs::path last = dir / "checkpoint_last.ltr";

  std::unique_ptr<Model> model;
  Sgd opt;
  TrainingState state;
  if (opts.resume && fs::exists(last)) {
    LoadedCheckpoint ck = load_checkpoint(last);
    if (detail::training_identity(ck.config) != detail::training_identity(cfg))
      throw ConfigError("checkpoint " + last.string() + " was written with a different configuration");
    model = std::move(ck.model);
    opt = std::move(ck.opt);
    state = std::move(ck.state);
    check_compatible(*model, data.train);
  } else {
    model = std::make_unique<Model>(resolve_network(cfg, data.train), cfg.seed);
  }
  check_compatible(*model, data.test);

  const std::vector<int> train_counts = data.train.class_counts();
  const Objective obj = make_objective(cfg.train, train_counts);
  const int stop = std::min(opts.stop_epoch.value_or(cfg.train.epochs), cfg.train.epochs);
  if (state.next_epoch < stop)
    prepare_rsg(*model, data.train, cfg.seed);

  for (int e = state.next_epoch; e < stop; ++e) {
    EpochRecord rec;
    rec.stats = train_epoch(*model, opt, data.train, e, obj);
    rec.metrics = evaluate_split(*model, data.test, train_counts, e + 1);
    state.history.push_back(rec);
    state.next_epoch = e + 1;
    const bool improved = rec.metrics.overall_top1 > state.best_top1;
    if (improved) {
      state.best_top1 = rec.metrics.overall_top1;
      state.best_epoch = e + 1;
    }
    save_checkpoint(last, cfg, *model, opt, state);
    if (improved)
      save_checkpoint(dir / "checkpoint_best.ltr", cfg, *model, opt, state);
    if (cfg.train.checkpoint_every > 0 && (e + 1) % cfg.train.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%04d.ltr", e + 1);
      save_checkpoint(dir / name, cfg, *model, opt, state);
    }
    if (opts.on_epoch)
      opts.on_epoch(rec);
  }
  if (!fs::exists(last) || state.history.empty())
    save_checkpoint(last, cfg, *model, opt, state);

  FitResult out;
  out.final_report = state.history.empty()
                         ? evaluate_split(*model, data.test, train_counts, state.next_epoch)
                         : state.history.back().metrics;
  out.state = state;

  detail::write_text(dir / "history.csv", history_csv(state.history));
  detail::write_text(dir / "metrics.json", to_json(out.final_report).dump(2) + "\n");
  detail::write_text(dir / "icd_table.md", icd_table(out.final_report));
  detail::write_plots(dir, state.history);
  return out;
}

/**
 * Fine-tunes a copy of the pretrained checkpoint for `eval_epochs` with the
 * individual's (alpha, lambda) and returns the test top-1. The schedule
 * continues from the checkpoint's next epoch; the epoch budget is extended
 * when the fine-tune would run past it.
 */
inline double finetune_fitness(const std::string &checkpoint_bytes, const std::string &origin,
                               const ExperimentData &data, int eval_epochs, double alpha,
                               double lambda) {
  LoadedCheckpoint ck = parse_checkpoint(checkpoint_bytes, origin);
  check_compatible(*ck.model, data.train);
  check_compatible(*ck.model, data.test);
  ExperimentConfig cfg = ck.config;
  cfg.train.loss_weights.alpha = alpha;
  cfg.train.loss_weights.lambda = lambda;
  const int first = ck.state.next_epoch;
  cfg.train.epochs = std::max(cfg.train.epochs, first + eval_epochs);
  cfg.validate();
  const std::vector<int> counts = data.train.class_counts();
  const Objective obj = make_objective(cfg.train, counts);
  prepare_rsg(*ck.model, data.train, cfg.seed);
  for (int e = first; e < first + eval_epochs; ++e)
    train_epoch(*ck.model, ck.opt, data.train, e, obj);
  return evaluate_split(*ck.model, data.test, counts, first + eval_epochs).overall_top1;
}

inline std::string read_file_bytes(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw io::IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace ltr
