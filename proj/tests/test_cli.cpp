// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ltr/cli.hpp"
#include "test_support.hpp"

using namespace ltr;
using namespace ltr::cli;

namespace {

json small_config_json(const fs::path &out, int epochs = 4) {
  return {{"task", "synthetic"},
          {"seed", 5},
          {"name", "cli"},
          {"output_dir", out.string()},
          {"longtail", {{"n_max", 80}, {"beta", 10}}},
          {"synthetic", {{"num_classes", 4}, {"feature_dim", 4}, {"test_per_class", 20}}},
          {"network",
           {{"hidden_dim", 16}, {"feature_dim", 8}, {"projection_dim", 8},
            {"rsg", {{"centers_per_class", 2}, {"pair_hidden", 8}}}}},
          {"train",
           {{"epochs", epochs}, {"batch_size", 16}, {"warmup_epochs", 1}, {"step_milestones", json::array()},
            {"t_th", 2}, {"loss_weights", {{"alpha", 1.0}, {"lambda", 1.0}, {"eta", 0.01}, {"mu", 0.01}}}}}};
}

std::string write_config(const fs::path &dir, const json &j, const std::string &name = "config.json") {
  const auto p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p.string();
}

Args args_for(const std::string &config) {
  Args a;
  a.config = config;
  a.quiet = true;
  return a;
}

struct Outcome {
  int code;
  std::string out, err;
};

template <typename Fn> Outcome run(Fn &&fn) {
  std::ostringstream out, err;
  const int code = guarded([&] { return fn(out, err); }, err);
  return {code, out.str(), err.str()};
}

Outcome train(const Args &a) {
  return run([&](std::ostream &o, std::ostream &e) { return cmd_train(a, o, e); });
}

std::string slurp(const fs::path &p) { return read_file_bytes(p); }

/// Every regular file under `dir` except the timestamp sidecar, keyed by name.
std::map<std::string, std::string> snapshot(const fs::path &dir) {
  std::map<std::string, std::string> files;
  for (const auto &e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "run_meta.json")
      files[e.path().filename().string()] = slurp(e.path());
  return files;
}

} // namespace

TEST(MakeLt, SyntheticManifestIsReproducible) {
  const auto dir = ltr::testing::scratch_dir("cli_make_lt");
  const auto cfg = write_config(dir, small_config_json(dir / "out"));
  const Outcome first = run([&](std::ostream &o, std::ostream &) { return cmd_make_lt(args_for(cfg), o); });
  ASSERT_EQ(first.code, kOk) << first.err;
  const json summary = json::parse(first.out);
  EXPECT_EQ(summary["class_counts"], (std::vector<int>{80, 37, 17, 8}));
  const std::string manifest = slurp(dir / "out" / "split_manifest.json");
  EXPECT_TRUE(fs::exists(dir / "out" / "split_summary.md"));
  const Outcome second = run([&](std::ostream &o, std::ostream &) { return cmd_make_lt(args_for(cfg), o); });
  EXPECT_EQ(second.code, kOk);
  EXPECT_EQ(slurp(dir / "out" / "split_manifest.json"), manifest);
}

TEST(MakeLt, BetaOneKeepsFullSet) {
  const auto dir = ltr::testing::scratch_dir("cli_beta_one");
  json j = small_config_json(dir / "out");
  j["longtail"]["beta"] = 1;
  const Outcome r = run([&](std::ostream &o, std::ostream &) { return cmd_make_lt(args_for(write_config(dir, j)), o); });
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(json::parse(r.out)["total"], 320);
}

TEST(MakeLt, Cifar10BetaHundredListsReferenceCounts) {
  const auto dir = ltr::testing::scratch_dir("cli_cifar10");
  const auto root = dir / "cifar";
  fs::create_directories(root);
  std::vector<char> record(1 + 3072, 0);
  auto write_batch = [&](const fs::path &p, int n) {
    std::ofstream out(p, std::ios::binary);
    for (int i = 0; i < n; ++i) {
      record[0] = static_cast<char>(i % 10);
      record[1] = static_cast<char>(i % 251);
      out.write(record.data(), static_cast<std::streamsize>(record.size()));
    }
  };
  for (int b = 1; b <= 5; ++b)
    write_batch(root / ("data_batch_" + std::to_string(b) + ".bin"), 10000);
  write_batch(root / "test_batch.bin", 20);
  const json j = {{"task", "cifar10-lt"}, {"output_dir", (dir / "out").string()}, {"data", {{"root", root.string()}}}};
  const Outcome r = run([&](std::ostream &o, std::ostream &) { return cmd_make_lt(args_for(write_config(dir, j)), o); });
  ASSERT_EQ(r.code, kOk) << r.err;
  const json summary = json::parse(r.out);
  EXPECT_EQ(summary["class_counts"], (std::vector<int>{5000, 2997, 1796, 1077, 645, 387, 232, 139, 83, 50}));
  EXPECT_EQ(summary["total"], 12406);
  const json manifest = json::parse(slurp(dir / "out" / "split_manifest.json"));
  EXPECT_EQ(manifest["spec"]["counts"], summary["class_counts"]);
  for (std::size_t y = 0; y < 10; ++y)
    for (const auto &id : manifest["per_class_ids"][y])
      EXPECT_EQ(id.get<int>() % 10, static_cast<int>(y));
  fs::remove_all(root);
}

TEST(MakeLt, MissingDataIsAnIoError) {
  const auto dir = ltr::testing::scratch_dir("cli_missing_data");
  const json j = {{"task", "cifar10-lt"}, {"output_dir", (dir / "out").string()}, {"data", {{"root", (dir / "nope").string()}}}};
  const Outcome r = run([&](std::ostream &o, std::ostream &) { return cmd_make_lt(args_for(write_config(dir, j)), o); });
  EXPECT_EQ(r.code, kIo);
  EXPECT_EQ(json::parse(r.err)["error"]["type"], "io");
}

TEST(Train, ZeroEpochOverrideGivesEmptyHistoryAndValidReport) {
  const auto dir = ltr::testing::scratch_dir("cli_zero");
  Args a = args_for(write_config(dir, small_config_json(dir / "out")));
  a.epochs = 0;
  const Outcome r = train(a);
  ASSERT_EQ(r.code, kOk) << r.err;
  const json summary = json::parse(r.out);
  EXPECT_EQ(summary["epochs_completed"], 0);
  EXPECT_EQ(validate_report_json(summary["final"]), "");
  const std::string csv = slurp(dir / "out" / "history.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
  EXPECT_EQ(validate_report_json(json::parse(slurp(dir / "out" / "metrics.json"))), "");
}

TEST(Train, OutputsAreIdempotentApartFromSidecar) {
  const auto dir = ltr::testing::scratch_dir("cli_idem");
  const Args a = args_for(write_config(dir, small_config_json(dir / "out")));
  ASSERT_EQ(train(a).code, kOk);
  const auto first = snapshot(dir / "out");
  fs::remove_all(dir / "out");
  ASSERT_EQ(train(a).code, kOk);
  EXPECT_EQ(snapshot(dir / "out"), first);
  for (const char *f : {"config.json", "history.csv", "metrics.json", "icd_table.md", "accuracy.svg",
                        "losses.svg", "checkpoint_last.ltr", "checkpoint_best.ltr"})
    EXPECT_TRUE(first.count(f)) << f;
  EXPECT_TRUE(json::parse(slurp(dir / "out" / "run_meta.json")).contains("finished_at"));
}

TEST(Train, ResumeContinuesToSameResult) {
  const auto dir = ltr::testing::scratch_dir("cli_resume");
  const Args straight = args_for(write_config(dir, small_config_json(dir / "straight"), "a.json"));
  ASSERT_EQ(train(straight).code, kOk);

  Args part = args_for(write_config(dir, small_config_json(dir / "split"), "b.json"));
  part.epochs = 2;
  ASSERT_EQ(train(part).code, kOk);
  Args rest = part;
  rest.epochs.reset();
  rest.resume = true;
  const Outcome r = train(rest);
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(json::parse(r.out)["epochs_completed"], 4);
  EXPECT_EQ(slurp(dir / "split" / "history.csv"), slurp(dir / "straight" / "history.csv"));
  EXPECT_EQ(slurp(dir / "split" / "metrics.json"), slurp(dir / "straight" / "metrics.json"));
}

TEST(Eval, IdempotentAndSplitSelectable) {
  const auto dir = ltr::testing::scratch_dir("cli_eval");
  ASSERT_EQ(train(args_for(write_config(dir, small_config_json(dir / "out")))).code, kOk);
  Args e;
  e.checkpoint = (dir / "out" / "checkpoint_last.ltr").string();
  auto eval = [&] { return run([&](std::ostream &o, std::ostream &) { return cmd_eval(e, o); }); };
  const Outcome a = eval(), b = eval();
  ASSERT_EQ(a.code, kOk) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(validate_report_json(json::parse(a.out)), "");
  EXPECT_EQ(json::parse(a.out), json::parse(slurp(dir / "out" / "metrics.json")));
  EXPECT_TRUE(fs::exists(dir / "out" / "eval_test_icd.md"));
  e.split = "train";
  const Outcome t = eval();
  ASSERT_EQ(t.code, kOk);
  EXPECT_EQ(json::parse(t.out)["eval_counts"], json::parse(t.out)["train_counts"]);
}

TEST(Eval, ClassCountMismatchIsRejected) {
  const auto dir = ltr::testing::scratch_dir("cli_mismatch");
  ASSERT_EQ(train(args_for(write_config(dir, small_config_json(dir / "out")))).code, kOk);
  json other = small_config_json(dir / "other");
  other["synthetic"]["num_classes"] = 5;
  Args e = args_for(write_config(dir, other, "other.json"));
  e.checkpoint = (dir / "out" / "checkpoint_last.ltr").string();
  const Outcome r = run([&](std::ostream &o, std::ostream &) { return cmd_eval(e, o); });
  EXPECT_EQ(r.code, kConfig);
  EXPECT_NE(json::parse(r.err)["error"]["message"].get<std::string>().find("classes"), std::string::npos);
}

TEST(Config, UnknownKeyFailsBeforeAnyOutput) {
  const auto dir = ltr::testing::scratch_dir("cli_bad_config");
  json j = small_config_json(dir / "out");
  j["train"]["warmup"] = 3;
  const Outcome r = train(args_for(write_config(dir, j)));
  EXPECT_EQ(r.code, kConfig);
  EXPECT_EQ(json::parse(r.err)["error"]["message"], "unknown key train.warmup");
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Ga, SurrogateRecoversOptimumAndWritesTopTen) {
  const auto dir = ltr::testing::scratch_dir("cli_ga");
  json j = small_config_json(dir / "out");
  j["ga"] = {{"population_size", 20}, {"generations", 20}, {"surrogate", {{"alpha", 3.0}, {"lambda", 1.0}}}};
  const Outcome r = run([&](std::ostream &o, std::ostream &e) { return cmd_ga(args_for(write_config(dir, j)), o, e); });
  ASSERT_EQ(r.code, kOk) << r.err;
  const json res = json::parse(r.out);
  EXPECT_LE(std::abs(res["best"]["alpha"].get<double>() - 3.0), 0.5);
  EXPECT_LE(std::abs(res["best"]["lambda"].get<double>() - 1.0), 0.5);
  EXPECT_EQ(res["mode"], "sequential");
  const std::string csv = slurp(dir / "out" / "ga_top10.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  const std::string log = slurp(dir / "out" / "ga_log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 20 + 20 * 18);
  EXPECT_TRUE(fs::exists(dir / "out" / "ga_top10.svg"));
}

TEST(Ga, SmallPopulationGivesFewerRows) {
  const auto dir = ltr::testing::scratch_dir("cli_ga_small");
  json j = small_config_json(dir / "out");
  j["ga"] = {{"population_size", 4}, {"elitism_count", 1}, {"generations", 0}, {"surrogate", json::object()}};
  const Outcome r = run([&](std::ostream &o, std::ostream &e) { return cmd_ga(args_for(write_config(dir, j)), o, e); });
  ASSERT_EQ(r.code, kOk) << r.err;
  const std::string csv = slurp(dir / "out" / "ga_top10.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Ga, MissingCheckpointIsReported) {
  const auto dir = ltr::testing::scratch_dir("cli_ga_missing");
  json j = small_config_json(dir / "out");
  j["ga"] = {{"pretrained_checkpoint", (dir / "none.ltr").string()}};
  const Outcome r = run([&](std::ostream &o, std::ostream &e) { return cmd_ga(args_for(write_config(dir, j)), o, e); });
  EXPECT_EQ(r.code, kIo);
  const json err = json::parse(r.err);
  EXPECT_EQ(err["error"]["type"], "io");
  EXPECT_NE(err["error"]["message"].get<std::string>().find("none.ltr"), std::string::npos);
  j["ga"] = json::object();
  const Outcome r2 = run([&](std::ostream &o, std::ostream &e) { return cmd_ga(args_for(write_config(dir, j)), o, e); });
  EXPECT_EQ(r2.code, kConfig);
}

TEST(Ga, FinetuneFitnessIsDeterministicAndInRange) {
  const auto dir = ltr::testing::scratch_dir("cli_ga_finetune");
  ASSERT_EQ(train(args_for(write_config(dir, small_config_json(dir / "pre", 3)))).code, kOk);
  const auto ck = dir / "pre" / "checkpoint_last.ltr";
  const std::string bytes = read_file_bytes(ck);
  const ExperimentData data = load_data(parse_checkpoint(bytes, ck.string()).config);
  const double a = finetune_fitness(bytes, ck.string(), data, 2, 1.5, 0.5);
  EXPECT_EQ(finetune_fitness(bytes, ck.string(), data, 2, 1.5, 0.5), a);
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
  EXPECT_NO_THROW(finetune_fitness(bytes, ck.string(), data, 1, 0.0, 1.0));

  json j = small_config_json(dir / "ga");
  j["ga"] = {{"population_size", 3}, {"elitism_count", 1}, {"generations", 1}, {"eval_epochs", 1},
             {"pretrained_checkpoint", ck.string()}};
  const Outcome r = run([&](std::ostream &o, std::ostream &e) { return cmd_ga(args_for(write_config(dir, j)), o, e); });
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(json::parse(r.out)["fitness_source"], "finetune");
  EXPECT_EQ(json::parse(r.out)["evaluations"], 5);
}

TEST(Binary, ExitCodesAndErrorJson) {
  const char *cli = std::getenv("LTR_CLI");
  if (!cli || !*cli)
    GTEST_SKIP() << "LTR_CLI not set";
  const auto dir = ltr::testing::scratch_dir("cli_binary");
  const auto cfg = write_config(dir, small_config_json(dir / "out"));
  auto shell = [&](const std::string &args, std::string &captured) {
    const std::string cmd = std::string(cli) + " " + args + " 2>" + (dir / "err.txt").string();
    FILE *p = popen(cmd.c_str(), "r");
    captured.clear();
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof buf, p))
      captured.append(buf, n);
    const int status = pclose(p);
    return WEXITSTATUS(status);
  };
  std::string out;
  EXPECT_EQ(shell("train --config " + cfg + " --epochs 1 --quiet", out), 0);
  EXPECT_EQ(json::parse(out)["epochs_completed"], 1);
  EXPECT_EQ(shell("eval --checkpoint " + (dir / "out" / "checkpoint_last.ltr").string(), out), 0);
  EXPECT_EQ(validate_report_json(json::parse(out)), "");
  EXPECT_EQ(shell("train --config " + (dir / "absent.json").string(), out), 2);
  EXPECT_EQ(json::parse(slurp(dir / "err.txt"))["error"]["type"], "config");
  EXPECT_EQ(shell("eval --checkpoint " + (dir / "absent.ltr").string(), out), 3);
  EXPECT_NE(shell("frobnicate", out), 0);
}
