// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Experiment configuration: JSON schema, strict parsing (unknown keys
 *         are errors) and validation ahead of any computation.
 *
 * Top-level keys:
 *   task        "synthetic" | "cifar10-lt" | "cifar100-lt" | "arrays"
 *   seed        drives split construction, initialisation, batching and GA
 *   output_dir  run directory; empty means <output root>/<name>
 *   name        run name used for the default output directory
 *   data        root, train_dir, test_dir, class_order, manifest
 *   longtail    n_max (0 = task default), beta
 *   synthetic   num_classes, feature_dim, class_separation, within_class_std, test_per_class
 *   network     backbone, classifier, widths, rsg {...}
 *   train       optimizer, schedule, t_th, loss_weights, scl, ldam
 *   ga          search settings, pretrained_checkpoint, optional surrogate
 */
#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltr/ga.hpp"
#include "ltr/model.hpp"
#include "ltr/trainer.hpp"

namespace ltr {

using nlohmann::json;

enum class Task { Synthetic, Cifar10, Cifar100, Arrays };

struct DataConfig {
  std::string root;      ///< CIFAR batch directory
  std::string train_dir; ///< array layout, train split
  std::string test_dir;  ///< array layout, test split
  std::vector<int> class_order;
  std::string manifest; ///< reuse an existing split manifest instead of sampling
};

struct LongTailParams {
  int n_max = 0; ///< 0 picks the task default (5000 / 500 / 500; arrays keep their counts)
  double beta = 100.0;
};

struct SyntheticParams {
  int num_classes = 10;
  int feature_dim = 8;
  double class_separation = 3.0;
  double within_class_std = 1.0;
  int test_per_class = 100;
};

struct SurrogateParams {
  double alpha = 3.0;
  double lambda = 1.0;
};

struct GaSettings {
  ga::GAConfig search;
  std::string pretrained_checkpoint;
  std::optional<SurrogateParams> surrogate; ///< planted quadratic fitness instead of training
  int top_k = 10;
};

struct ExperimentConfig {
  Task task = Task::Synthetic;
  std::uint64_t seed = 0;
  std::string name = "run";
  std::string output_dir;
  DataConfig data;
  LongTailParams longtail;
  SyntheticParams synthetic;
  NetworkConfig network;
  TrainConfig train;
  std::optional<GaSettings> ga;

  /// Propagates the top-level seed into the sub-configs that carry one.
  void apply_seed(std::uint64_t s) {
    seed = s;
    train.seed = s;
    if (ga)
      ga->search.seed = s;
  }

  void validate() const {
    train.validate();
    if (ga) {
      ga->search.validate();
      if (ga->top_k < 1)
        throw ConfigError("ga.top_k must be positive");
    }
    if (longtail.n_max < 0)
      throw ConfigError("longtail.n_max must be non-negative");
    if (!(longtail.beta >= 1.0))
      throw ConfigError("longtail.beta must be >= 1");
    switch (task) {
    case Task::Cifar10:
    case Task::Cifar100:
      if (data.root.empty())
        throw ConfigError("CIFAR tasks need data.root");
      break;
    case Task::Arrays:
      if (data.train_dir.empty() || data.test_dir.empty())
        throw ConfigError("array tasks need data.train_dir and data.test_dir");
      break;
    case Task::Synthetic:
      if (synthetic.num_classes < 1 || synthetic.feature_dim < 2)
        throw ConfigError("synthetic task needs num_classes >= 1 and feature_dim >= 2");
      if (!(synthetic.class_separation > 0.0) || !(synthetic.within_class_std > 0.0))
        throw ConfigError("synthetic class_separation and within_class_std must be positive");
      if (synthetic.test_per_class < 1)
        throw ConfigError("synthetic.test_per_class must be positive");
      break;
    }
    // input shape and class count are filled from the data, so check the rest with placeholders
    NetworkConfig probe = network;
    probe.input = {1, 1, 1, 1};
    probe.num_classes = 1;
    probe.validate();
  }
};

namespace detail {

/// JSON object view that records every key it reads and rejects the rest on `done()`.
class StrictObject {
public:
  StrictObject(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(where() + " must be an object");
  }

  template <typename T> void read(const char *key, T &out) {
    seen_.insert(key);
    if (!j_.contains(key))
      return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception &) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  bool has(const char *key) const { return j_.contains(key); }

  StrictObject sub(const char *key) {
    seen_.insert(key);
    static const json empty = json::object();
    return StrictObject(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  void done() const {
    for (const auto &[k, v] : j_.items())
      if (!seen_.count(k))
        throw ConfigError("unknown key " + where(k));
  }

private:
  std::string where(const std::string &key = "") const {
    if (key.empty())
      return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E> struct EnumName {
  E value;
  const char *name;
};

template <typename E, std::size_t N>
E enum_from(const std::string &s, const EnumName<E> (&table)[N], const std::string &what) {
  for (const auto &e : table)
    if (s == e.name)
      return e.value;
  std::string allowed;
  for (const auto &e : table)
    allowed += (allowed.empty() ? "" : ", ") + std::string(e.name);
  throw ConfigError(what + " must be one of " + allowed + ", got \"" + s + "\"");
}

template <typename E, std::size_t N> std::string enum_to(E v, const EnumName<E> (&table)[N]) {
  for (const auto &e : table)
    if (v == e.value)
      return e.name;
  return "?";
}

inline constexpr EnumName<Task> kTasks[] = {{Task::Synthetic, "synthetic"},
                                            {Task::Cifar10, "cifar10-lt"},
                                            {Task::Cifar100, "cifar100-lt"},
                                            {Task::Arrays, "arrays"}};
inline constexpr EnumName<Backbone> kBackbones[] = {{Backbone::Mlp, "mlp"}, {Backbone::ResNet, "resnet"}};
inline constexpr EnumName<ClassifierKind> kClassifiers[] = {{ClassifierKind::Cosine, "cosine"},
                                                            {ClassifierKind::Linear, "linear"}};
inline constexpr EnumName<Schedule> kSchedules[] = {{Schedule::Cosine, "cosine"},
                                                    {Schedule::Step, "step"},
                                                    {Schedule::CosineWarmRestarts, "cosine_warm_restarts"}};
inline constexpr EnumName<RareRule> kRareRules[] = {{RareRule::GeometricMean, "geometric_mean"},
                                                    {RareRule::Fraction, "fraction"}};

template <typename E, std::size_t N>
void read_enum(StrictObject &o, const char *key, E &out, const EnumName<E> (&table)[N],
               const std::string &what) {
  std::string s = enum_to(out, table);
  o.read(key, s);
  out = enum_from(s, table, what);
}

} // namespace detail

inline std::string task_name(Task t) { return detail::enum_to(t, detail::kTasks); }

inline ExperimentConfig config_from_json(const json &j) {
  using detail::read_enum, detail::StrictObject;
  ExperimentConfig c;
  StrictObject top(j, "");
  read_enum(top, "task", c.task, detail::kTasks, "task");
  top.read("seed", c.seed);
  top.read("name", c.name);
  top.read("output_dir", c.output_dir);

  {
    auto d = top.sub("data");
    d.read("root", c.data.root);
    d.read("train_dir", c.data.train_dir);
    d.read("test_dir", c.data.test_dir);
    d.read("class_order", c.data.class_order);
    d.read("manifest", c.data.manifest);
    d.done();
  }
  {
    auto l = top.sub("longtail");
    l.read("n_max", c.longtail.n_max);
    l.read("beta", c.longtail.beta);
    l.done();
  }
  {
    auto s = top.sub("synthetic");
    s.read("num_classes", c.synthetic.num_classes);
    s.read("feature_dim", c.synthetic.feature_dim);
    s.read("class_separation", c.synthetic.class_separation);
    s.read("within_class_std", c.synthetic.within_class_std);
    s.read("test_per_class", c.synthetic.test_per_class);
    s.done();
  }
  {
    auto n = top.sub("network");
    auto &net = c.network;
    read_enum(n, "backbone", net.backbone, detail::kBackbones, "network.backbone");
    read_enum(n, "classifier", net.classifier, detail::kClassifiers, "network.classifier");
    n.read("hidden_dim", net.hidden_dim);
    n.read("feature_dim", net.feature_dim);
    n.read("projection_dim", net.projection_dim);
    n.read("resnet_blocks", net.resnet_blocks);
    n.read("resnet_width", net.resnet_width);
    auto r = n.sub("rsg");
    r.read("enabled", net.rsg.enabled);
    r.read("centers_per_class", net.rsg.centers_per_class);
    read_enum(r, "rare_rule", net.rsg.rare_rule, detail::kRareRules, "network.rsg.rare_rule");
    r.read("rare_fraction", net.rsg.rare_fraction);
    r.read("pair_hidden", net.rsg.pair_hidden);
    r.read("center_h", net.rsg.center_h);
    r.read("center_w", net.rsg.center_w);
    r.done();
    n.done();
  }
  {
    auto t = top.sub("train");
    auto &tr = c.train;
    t.read("epochs", tr.epochs);
    t.read("batch_size", tr.batch_size);
    t.read("base_lr", tr.base_lr);
    t.read("momentum", tr.momentum);
    t.read("weight_decay", tr.weight_decay);
    t.read("warmup_epochs", tr.warmup_epochs);
    read_enum(t, "schedule", tr.schedule, detail::kSchedules, "train.schedule");
    t.read("step_milestones", tr.step_milestones);
    t.read("step_factor", tr.step_factor);
    t.read("restart_period", tr.restart_period);
    t.read("t_th", tr.t_th);
    t.read("checkpoint_every", tr.checkpoint_every);
    auto w = t.sub("loss_weights");
    w.read("alpha", tr.loss_weights.alpha);
    w.read("lambda", tr.loss_weights.lambda);
    w.read("eta", tr.loss_weights.eta);
    w.read("mu", tr.loss_weights.mu);
    w.done();
    auto s = t.sub("scl");
    s.read("tau", tr.scl.tau);
    s.done();
    auto l = t.sub("ldam");
    l.read("max_m", tr.ldam.max_m);
    l.read("s", tr.ldam.s);
    l.read("margins", tr.ldam.margins);
    l.done();
    t.done();
  }
  if (top.has("ga")) {
    auto g = top.sub("ga");
    GaSettings gs;
    g.read("population_size", gs.search.population_size);
    g.read("generations", gs.search.generations);
    g.read("lower", gs.search.lower);
    g.read("upper", gs.search.upper);
    g.read("mutation_std", gs.search.mutation_std);
    g.read("crossover_rate", gs.search.crossover_rate);
    g.read("elitism_count", gs.search.elitism_count);
    g.read("eval_epochs", gs.search.eval_epochs);
    g.read("pretrained_checkpoint", gs.pretrained_checkpoint);
    g.read("top_k", gs.top_k);
    if (g.has("surrogate")) {
      auto s = g.sub("surrogate");
      SurrogateParams sp;
      s.read("alpha", sp.alpha);
      s.read("lambda", sp.lambda);
      s.done();
      gs.surrogate = sp;
    }
    g.done();
    c.ga = gs;
  }
  top.done();
  c.apply_seed(c.seed);
  c.validate();
  return c;
}

/// Fully expanded configuration, defaults included; parses back to the same values.
inline json config_to_json(const ExperimentConfig &c) {
  using detail::enum_to;
  const auto &net = c.network;
  const auto &tr = c.train;
  json j = {
      {"task", enum_to(c.task, detail::kTasks)},
      {"seed", c.seed},
      {"name", c.name},
      {"output_dir", c.output_dir},
      {"data",
       {{"root", c.data.root},
        {"train_dir", c.data.train_dir},
        {"test_dir", c.data.test_dir},
        {"class_order", c.data.class_order},
        {"manifest", c.data.manifest}}},
      {"longtail", {{"n_max", c.longtail.n_max}, {"beta", c.longtail.beta}}},
      {"synthetic",
       {{"num_classes", c.synthetic.num_classes},
        {"feature_dim", c.synthetic.feature_dim},
        {"class_separation", c.synthetic.class_separation},
        {"within_class_std", c.synthetic.within_class_std},
        {"test_per_class", c.synthetic.test_per_class}}},
      {"network",
       {{"backbone", enum_to(net.backbone, detail::kBackbones)},
        {"classifier", enum_to(net.classifier, detail::kClassifiers)},
        {"hidden_dim", net.hidden_dim},
        {"feature_dim", net.feature_dim},
        {"projection_dim", net.projection_dim},
        {"resnet_blocks", net.resnet_blocks},
        {"resnet_width", net.resnet_width},
        {"rsg",
         {{"enabled", net.rsg.enabled},
          {"centers_per_class", net.rsg.centers_per_class},
          {"rare_rule", enum_to(net.rsg.rare_rule, detail::kRareRules)},
          {"rare_fraction", net.rsg.rare_fraction},
          {"pair_hidden", net.rsg.pair_hidden},
          {"center_h", net.rsg.center_h},
          {"center_w", net.rsg.center_w}}}}},
      {"train",
       {{"epochs", tr.epochs},
        {"batch_size", tr.batch_size},
        {"base_lr", tr.base_lr},
        {"momentum", tr.momentum},
        {"weight_decay", tr.weight_decay},
        {"warmup_epochs", tr.warmup_epochs},
        {"schedule", enum_to(tr.schedule, detail::kSchedules)},
        {"step_milestones", tr.step_milestones},
        {"step_factor", tr.step_factor},
        {"restart_period", tr.restart_period},
        {"t_th", tr.t_th},
        {"checkpoint_every", tr.checkpoint_every},
        {"loss_weights",
         {{"alpha", tr.loss_weights.alpha},
          {"lambda", tr.loss_weights.lambda},
          {"eta", tr.loss_weights.eta},
          {"mu", tr.loss_weights.mu}}},
        {"scl", {{"tau", tr.scl.tau}}},
        {"ldam", {{"max_m", tr.ldam.max_m}, {"s", tr.ldam.s}, {"margins", tr.ldam.margins}}}}}};
  if (c.ga) {
    const auto &g = *c.ga;
    j["ga"] = {{"population_size", g.search.population_size},
               {"generations", g.search.generations},
               {"lower", g.search.lower},
               {"upper", g.search.upper},
               {"mutation_std", g.search.mutation_std},
               {"crossover_rate", g.search.crossover_rate},
               {"elitism_count", g.search.elitism_count},
               {"eval_epochs", g.search.eval_epochs},
               {"pretrained_checkpoint", g.pretrained_checkpoint},
               {"top_k", g.top_k}};
    if (g.surrogate)
      j["ga"]["surrogate"] = {{"alpha", g.surrogate->alpha}, {"lambda", g.surrogate->lambda}};
  }
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// LTR_OUTPUT_ROOT if set, otherwise "runs".
inline std::filesystem::path default_output_root() {
  const char *env = std::getenv("LTR_OUTPUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

inline std::filesystem::path resolve_output_dir(const ExperimentConfig &c) {
  return c.output_dir.empty() ? default_output_root() / c.name : std::filesystem::path(c.output_dir);
}

} // namespace ltr
