// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.hpp
 * @brief  The make-lt / train / eval / ga commands. Each takes parsed
 *         arguments, writes its artifacts and returns a process exit code;
 *         failures become a JSON error object on the error stream.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "ltr/experiment.hpp"

namespace ltr::cli {

namespace fs = std::filesystem;

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
  std::optional<int> epochs;
  std::string checkpoint;
  std::string split = "test";
  bool quiet = false;
};

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

inline ExperimentConfig resolve_config(const Args &a) {
  if (a.config.empty())
    throw ConfigError("--config is required");
  ExperimentConfig cfg = load_config(a.config);
  if (a.seed)
    cfg.apply_seed(*a.seed);
  if (!a.out.empty())
    cfg.output_dir = a.out;
  cfg.validate();
  return cfg;
}

inline void write_json(const fs::path &p, const json &j) { detail::write_text(p, j.dump(2) + "\n"); }

inline int cmd_make_lt(const Args &a, std::ostream &out) {
  const ExperimentConfig cfg = resolve_config(a);
  const fs::path dir = resolve_output_dir(cfg);
  const ExperimentData data = load_data(cfg, false);
  fs::create_directories(dir);
  const json manifest = split_manifest(data.train, cfg.seed);
  write_json(dir / "split_manifest.json", manifest);

  const std::vector<int> counts = data.train.class_counts();
  std::string md = "| Label | Sample Size | Group |\n|---|---|---|\n";
  for (std::size_t y = 0; y < counts.size(); ++y) {
    const char *g = counts[y] > 100 ? "many" : (counts[y] >= 20 ? "medium" : "few");
    md += "| " + std::to_string(y) + " | " + std::to_string(counts[y]) + " | " + g + " |\n";
  }
  detail::write_text(dir / "split_summary.md", md);
  out << json{{"manifest", (dir / "split_manifest.json").string()},
              {"total", data.train.size()},
              {"class_counts", counts},
              {"groups", manifest.at("groups")}}
             .dump()
      << "\n";
  return kOk;
}

inline int cmd_train(const Args &a, std::ostream &out, std::ostream &log) {
  const ExperimentConfig cfg = resolve_config(a);
  if (a.epochs && *a.epochs < 0)
    throw ConfigError("--epochs must be non-negative");
  const fs::path dir = resolve_output_dir(cfg);
  const ExperimentData data = load_data(cfg);
  fs::create_directories(dir);
  write_json(dir / "config.json", config_to_json(cfg));

  FitOptions opts;
  opts.resume = a.resume;
  opts.stop_epoch = a.epochs;
  if (!a.quiet)
    opts.on_epoch = [&](const EpochRecord &r) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "epoch %d lr %.5f loss %.4f generated %d top1 %.4f\n",
                    r.stats.epoch + 1, r.stats.lr, r.stats.total, r.stats.generated,
                    r.metrics.overall_top1);
      log << buf << std::flush;
    };
  const FitResult res = fit(cfg, data, dir, opts);
  detail::write_run_meta(dir, "train", {{"resumed", a.resume}});
  out << json{{"output_dir", dir.string()},
              {"epochs_completed", res.state.next_epoch},
              {"best_epoch", res.state.best_epoch},
              {"best_top1", res.state.best_top1},
              {"final", to_json(res.final_report)}}
             .dump()
      << "\n";
  return kOk;
}

inline int cmd_eval(const Args &a, std::ostream &out) {
  if (a.checkpoint.empty())
    throw ConfigError("--checkpoint is required");
  if (a.split != "test" && a.split != "train")
    throw ConfigError("--split must be test or train");
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  ExperimentConfig data_cfg = a.config.empty() ? ck.config : resolve_config(a);
  if (a.config.empty() && a.seed)
    data_cfg.apply_seed(*a.seed);
  const ExperimentData data = load_data(data_cfg, a.split == "test");
  const DatasetSplit &split = a.split == "test" ? data.test : data.train;
  check_compatible(*ck.model, split);
  const MetricsReport report =
      evaluate_split(*ck.model, split, data.train.class_counts(), ck.state.next_epoch);

  const fs::path dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  if (!dir.empty())
    fs::create_directories(dir);
  const json j = to_json(report);
  write_json(dir / ("eval_" + a.split + ".json"), j);
  detail::write_text(dir / ("eval_" + a.split + "_icd.md"), icd_table(report));
  out << j.dump() << "\n";
  return kOk;
}

inline int cmd_ga(const Args &a, std::ostream &out, std::ostream &log) {
  const ExperimentConfig cfg = resolve_config(a);
  if (!cfg.ga)
    throw ConfigError("config has no ga section");
  const GaSettings &gs = *cfg.ga;
  const fs::path dir = resolve_output_dir(cfg);

  ga::FitnessFn fitness;
  std::string source;
  std::string bytes;
  std::optional<ExperimentData> data;
  if (gs.surrogate) {
    fitness = ga::quadratic_surrogate(gs.surrogate->alpha, gs.surrogate->lambda);
    source = "surrogate";
  } else {
    if (gs.pretrained_checkpoint.empty())
      throw ConfigError("ga.pretrained_checkpoint is required unless ga.surrogate is set");
    if (!fs::exists(gs.pretrained_checkpoint))
      throw io::IoError("pretrained checkpoint " + gs.pretrained_checkpoint + " does not exist");
    bytes = read_file_bytes(gs.pretrained_checkpoint);
    const LoadedCheckpoint ck = parse_checkpoint(bytes, gs.pretrained_checkpoint);
    data = load_data(ck.config);
    fitness = [&](const ga::Individual &ind) {
      return finetune_fitness(bytes, gs.pretrained_checkpoint, *data, gs.search.eval_epochs, ind.alpha,
                              ind.lambda);
    };
    source = "finetune";
  }

  fs::create_directories(dir);
  std::string log_lines;
  const ga::SearchResult res = ga::search(gs.search, fitness, [&](const ga::Individual &ind) {
    json rec = ga::to_json(ind, "sequential");
    rec["fitness_source"] = source;
    log_lines += rec.dump() + "\n";
    if (!a.quiet)
      log << rec.dump() << "\n" << std::flush;
  });
  detail::write_text(dir / "ga_log.jsonl", log_lines);
  detail::write_text(dir / "ga_top10.csv", ga::top_k_csv(res, static_cast<std::size_t>(gs.top_k)));

  std::vector<std::string> labels;
  std::vector<double> values;
  for (std::size_t i = 0; i < std::min<std::size_t>(static_cast<std::size_t>(gs.top_k), res.evaluated.size()); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "(%.2f, %.2f)", res.evaluated[i].alpha, res.evaluated[i].lambda);
    labels.emplace_back(buf);
    values.push_back(*res.evaluated[i].fitness);
  }
  detail::write_text(dir / "ga_top10.svg",
                     plot::bar_chart("Top weight combinations (alpha, lambda)", "fitness", labels, values));
  const json result = {{"mode", "sequential"},
                       {"fitness_source", source},
                       {"best", ga::to_json(res.evaluated.front(), "sequential")},
                       {"best_per_generation", res.best_per_generation},
                       {"evaluations", res.evaluated.size()}};
  write_json(dir / "ga_result.json", result);
  detail::write_run_meta(dir, "ga");
  out << result.dump() << "\n";
  return kOk;
}

/// Runs a command, mapping exceptions to exit codes and a JSON error on `err`.
template <typename Fn> int guarded(Fn &&fn, std::ostream &err) {
  auto fail = [&](int code, const char *type, const std::string &msg) {
    err << json{{"error", {{"type", type}, {"message", msg}}}}.dump() << "\n";
    return code;
  };
  try {
    return fn();
  } catch (const ConfigError &e) {
    return fail(kConfig, "config", e.what());
  } catch (const io::IoError &e) {
    return fail(kIo, "io", e.what());
  } catch (const NumericalError &e) {
    return fail(kNumerical, "numerical", e.what());
  } catch (const fs::filesystem_error &e) {
    return fail(kIo, "io", e.what());
  } catch (const std::exception &e) {
    return fail(kFailure, "internal", e.what());
  }
}

} // namespace ltr::cli
