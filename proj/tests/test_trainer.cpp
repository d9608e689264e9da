// SPDX-License-Identifier: Apache-2.0
#include "ltr/experiment.hpp"
#include "test_support.hpp"

using namespace ltr;

namespace {

ExperimentConfig small_config(int epochs = 5, int t_th = 2) {
  json j = {
      {"task", "synthetic"},
      {"seed", 3},
      {"longtail", {{"n_max", 80}, {"beta", 10}}},
      {"synthetic", {{"num_classes", 4}, {"feature_dim", 4}, {"class_separation", 3.0}, {"test_per_class", 20}}},
      {"network",
       {{"backbone", "mlp"}, {"hidden_dim", 16}, {"feature_dim", 8}, {"projection_dim", 8},
        {"rsg", {{"enabled", true}, {"centers_per_class", 2}, {"pair_hidden", 8}}}}},
      {"train",
       {{"epochs", epochs}, {"batch_size", 16}, {"warmup_epochs", 1}, {"step_milestones", json::array()},
        {"t_th", t_th}, {"loss_weights", {{"alpha", 1.0}, {"lambda", 1.0}, {"eta", 0.01}, {"mu", 0.01}}}}}};
  return config_from_json(j);
}

std::vector<double> flat_params(Model &m) {
  std::vector<double> out;
  for (const auto &p : m.params())
    out.insert(out.end(), p.value.begin(), p.value.end());
  return out;
}

json history_json(const TrainingState &s) {
  json j = json::array();
  for (const auto &r : s.history)
    j.push_back(to_json(r));
  return j;
}

} // namespace

TEST(LrSchedule, CifarDefaultsReproduceComposedRule) {
  const TrainConfig cfg;
  EXPECT_NEAR(lr_schedule(0, cfg), 0.02, 1e-12);
  EXPECT_NEAR(lr_schedule(4, cfg), 0.1, 1e-12);
  EXPECT_NEAR(lr_schedule(5, cfg), 0.1, 1e-12);
  EXPECT_NEAR(lr_schedule(159, cfg), 0.010516948149147755, 1e-12);
  EXPECT_NEAR(lr_schedule(160, cfg), 0.0010027861829824953, 1e-12);
  EXPECT_NEAR(lr_schedule(180, cfg), 2.5731779026427322e-05, 1e-12);
  EXPECT_NEAR(lr_schedule(190, cfg), 6.474868681043578e-06, 1e-12);
  for (int e = 0; e < cfg.epochs - 1; ++e)
    EXPECT_GT(lr_schedule(e, cfg), 0.0) << e;
  EXPECT_THROW(lr_schedule(-1, cfg), std::invalid_argument);
  EXPECT_THROW(lr_schedule(200, cfg), std::invalid_argument);
}

TEST(LrSchedule, StepAndWarmRestarts) {
  TrainConfig cfg;
  cfg.schedule = Schedule::Step;
  EXPECT_DOUBLE_EQ(lr_schedule(100, cfg), 0.1);
  EXPECT_NEAR(lr_schedule(170, cfg), 0.01, 1e-15);
  EXPECT_NEAR(lr_schedule(199, cfg), 0.001, 1e-15);
  cfg.schedule = Schedule::CosineWarmRestarts;
  cfg.step_milestones.clear();
  EXPECT_DOUBLE_EQ(lr_schedule(5, cfg), 0.1);
  EXPECT_DOUBLE_EQ(lr_schedule(15, cfg), 0.1);
  EXPECT_NEAR(lr_schedule(10, cfg), 0.05, 1e-15);
}

TEST(TrainConfig, RejectsInvalidSettings) {
  TrainConfig cfg;
  cfg.t_th = 201;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.step_milestones = {180, 160};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.step_milestones = {200};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(TrainStep, ZeroWeightsOnlyDecay) {
  ExperimentConfig cfg = small_config();
  cfg.train.loss_weights = {0, 0, 0, 0};
  const ExperimentData data = load_data(cfg);
  Model m(resolve_network(cfg, data.train), 1);
  prepare_rsg(m, data.train, 1);
  Sgd opt;
  const Objective obj = make_objective(cfg.train, data.train.class_counts());
  std::vector<std::vector<double>> before;
  for (const auto &p : m.params())
    before.emplace_back(p.value.begin(), p.value.end());
  const std::vector<std::size_t> idx{0, 1, 2, 3, 40, 70, 90, 100};
  auto rng = make_rng(1, 2);
  train_step(m, opt, data.train.gather(idx), 0, 0.05, obj, rng);
  const auto params = m.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double factor = params[k].decay ? 1.0 - 0.05 * cfg.train.weight_decay : 1.0;
    for (std::size_t i = 0; i < before[k].size(); ++i)
      ASSERT_NEAR(params[k].value[i], before[k][i] * factor, 1e-15) << params[k].name;
  }
}

TEST(TrainEpoch, NoGenerationUntilThreshold) {
  ExperimentConfig cfg = small_config(6, 3);
  const ExperimentData data = load_data(cfg);
  Model m(resolve_network(cfg, data.train), cfg.seed);
  Sgd opt;
  prepare_rsg(m, data.train, cfg.seed);
  const Objective obj = make_objective(cfg.train, data.train.class_counts());
  for (int e = 0; e < 6; ++e) {
    const EpochStats s = train_epoch(m, opt, data.train, e, obj);
    if (e + 1 <= cfg.train.t_th) {
      EXPECT_EQ(s.generated, 0) << e;
      EXPECT_EQ(s.parts.mv, 0.0) << e;
    } else {
      EXPECT_GT(s.generated, 0) << e;
    }
    EXPECT_TRUE(std::isfinite(s.total));
    EXPECT_GT(s.batches, 0u);
  }
}

TEST(Fit, DeterministicReplay) {
  const ExperimentConfig cfg = small_config();
  const ExperimentData data = load_data(cfg);
  const auto dir_a = ltr::testing::scratch_dir("replay_a"), dir_b = ltr::testing::scratch_dir("replay_b");
  const FitResult a = fit(cfg, data, dir_a), b = fit(cfg, data, dir_b);
  EXPECT_EQ(history_json(a.state), history_json(b.state));
  EXPECT_EQ(read_file_bytes(dir_a / "checkpoint_last.ltr"), read_file_bytes(dir_b / "checkpoint_last.ltr"));
  EXPECT_EQ(read_file_bytes(dir_a / "history.csv"), read_file_bytes(dir_b / "history.csv"));
}

TEST(Fit, ResumeMatchesStraightRun) {
  const ExperimentConfig cfg = small_config(5, 2);
  const ExperimentData data = load_data(cfg);
  const auto straight = ltr::testing::scratch_dir("straight"), split = ltr::testing::scratch_dir("split");
  const FitResult full = fit(cfg, data, straight);

  FitOptions first;
  first.stop_epoch = 3;
  const FitResult part = fit(cfg, data, split, first);
  EXPECT_EQ(part.state.next_epoch, 3);
  FitOptions rest;
  rest.resume = true;
  const FitResult resumed = fit(cfg, data, split, rest);
  EXPECT_EQ(resumed.state.next_epoch, 5);
  EXPECT_EQ(history_json(resumed.state), history_json(full.state));

  auto a = load_checkpoint(straight / "checkpoint_last.ltr");
  auto b = load_checkpoint(split / "checkpoint_last.ltr");
  EXPECT_EQ(flat_params(*a.model), flat_params(*b.model));
  EXPECT_EQ(a.opt.velocity(), b.opt.velocity());
}

TEST(Fit, ResumeRejectsDifferentTrainingConfig) {
  ExperimentConfig cfg = small_config(4, 2);
  const ExperimentData data = load_data(cfg);
  const auto dir = ltr::testing::scratch_dir("resume_mismatch");
  FitOptions first;
  first.stop_epoch = 1;
  fit(cfg, data, dir, first);
  cfg.train.base_lr = 0.05;
  FitOptions rest;
  rest.resume = true;
  EXPECT_THROW(fit(cfg, data, dir, rest), ConfigError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const ExperimentConfig cfg = small_config(3, 1);
  const ExperimentData data = load_data(cfg);
  const auto dir = ltr::testing::scratch_dir("roundtrip");
  fit(cfg, data, dir);
  const std::string first = read_file_bytes(dir / "checkpoint_last.ltr");
  LoadedCheckpoint ck = parse_checkpoint(first, "roundtrip");
  EXPECT_EQ(ck.state.next_epoch, 3);
  EXPECT_EQ(ck.state.history.size(), 3u);
  EXPECT_TRUE(ck.model->centers_ready());
  EXPECT_EQ(serialize_checkpoint(ck.config, *ck.model, ck.opt, ck.state), first);

  std::string broken = first;
  broken[0] = 'X';
  EXPECT_THROW(parse_checkpoint(broken, "broken"), io::IoError);
  EXPECT_THROW(parse_checkpoint(first.substr(0, first.size() / 2), "short"), io::IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ltr"), io::IoError);
}

TEST(Checkpoint, ResNetRunningStatisticsRoundTrip) {
  ExperimentConfig cfg = small_config(2, 1);
  cfg.network.backbone = Backbone::ResNet;
  cfg.network.resnet_blocks = 1;
  cfg.network.resnet_width = 2;
  const ExperimentData data = load_data(cfg);
  const auto dir = ltr::testing::scratch_dir("resnet_roundtrip");
  const FitResult r = fit(cfg, data, dir);
  const std::string bytes = read_file_bytes(dir / "checkpoint_last.ltr");
  LoadedCheckpoint ck = parse_checkpoint(bytes, "resnet");
  EXPECT_EQ(serialize_checkpoint(ck.config, *ck.model, ck.opt, ck.state), bytes);
  bool moved = false;
  for (const auto &st : ck.model->state())
    for (double v : st.value)
      moved = moved || (v != 0.0 && v != 1.0);
  EXPECT_TRUE(moved);
  const MetricsReport again = evaluate_split(*ck.model, data.test, data.train.class_counts(), 2);
  EXPECT_EQ(again.overall_top1, r.final_report.overall_top1);
}

TEST(Fit, ZeroEpochsGivesInitialisedCheckpointAndEmptyHistory) {
  const ExperimentConfig cfg = small_config(0, 0);
  const ExperimentData data = load_data(cfg);
  const auto dir = ltr::testing::scratch_dir("zero_epochs");
  const FitResult r = fit(cfg, data, dir);
  EXPECT_TRUE(r.state.history.empty());
  EXPECT_EQ(r.state.next_epoch, 0);
  EXPECT_TRUE(fs::exists(dir / "checkpoint_last.ltr"));
  EXPECT_EQ(validate_report_json(to_json(r.final_report)), "");
  const std::string csv = read_file_bytes(dir / "history.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
}

TEST(Fit, SeparableTaskReachesNinetyNinePercent) {
  ExperimentConfig cfg = small_config(30, 10);
  cfg.synthetic.class_separation = 10.0;
  cfg.train.batch_size = 32;
  const ExperimentData data = load_data(cfg);
  const FitResult r = fit(cfg, data, ltr::testing::scratch_dir("separable"));
  EXPECT_GE(r.state.best_top1, 0.99);
  EXPECT_LE(r.state.best_epoch, 30);
}

TEST(Fit, PairHeadSeparatesSameClassPairs) {
  ExperimentConfig cfg = small_config(12, 12);
  cfg.train.loss_weights.eta = 1.0;
  const ExperimentData data = load_data(cfg);
  const auto dir = ltr::testing::scratch_dir("pair_head");
  fit(cfg, data, dir);
  LoadedCheckpoint ck = load_checkpoint(dir / "checkpoint_last.ltr");
  const Batch test = data.test.all();
  const Matrix pooled = ck.model->infer_mid(test.inputs).as_matrix();
  double same = 0.0, cross = 0.0;
  int n_same = 0, n_cross = 0;
  for (Eigen::Index i = 0; i < pooled.rows(); i += 3)
    for (Eigen::Index j = i + 1; j < pooled.rows(); j += 5) {
      const double p = ck.model->pair_head().forward(pooled.row(i), pooled.row(j)).probs(0);
      if (test.labels[static_cast<std::size_t>(i)] == test.labels[static_cast<std::size_t>(j)]) {
        same += p;
        ++n_same;
      } else {
        cross += p;
        ++n_cross;
      }
    }
  ASSERT_GT(n_same, 0);
  ASSERT_GT(n_cross, 0);
  EXPECT_GT(same / n_same, cross / n_cross);
}

TEST(History, CsvHasDocumentedColumns) {
  const ExperimentConfig cfg = small_config(2, 1);
  const ExperimentData data = load_data(cfg);
  const auto dir = ltr::testing::scratch_dir("history");
  fit(cfg, data, dir);
  const std::string csv = read_file_bytes(dir / "history.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "epoch,lr,loss_scl,loss_ldam,loss_cesc,loss_mv,loss_total,generated,overall,many,medium,"
            "few,avg_icd");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 2), "1,");
  for (const char *f : {"accuracy.svg", "losses.svg", "metrics.json", "icd_table.md", "checkpoint_best.ltr"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
}
