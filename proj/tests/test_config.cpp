// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <fstream>

#include "ltr/config.hpp"
#include "test_support.hpp"

using namespace ltr;

namespace {

std::string config_error(const json &j) {
  try {
    config_from_json(j).validate();
  } catch (const ConfigError &e) {
    return e.what();
  }
  return {};
}

} // namespace

TEST(Config, DefaultsAreValid) {
  const ExperimentConfig c = config_from_json(json::object());
  EXPECT_EQ(c.task, Task::Synthetic);
  EXPECT_EQ(c.train.epochs, 200);
  EXPECT_EQ(c.train.step_milestones, (std::vector<int>{160, 180}));
  EXPECT_EQ(c.train.t_th, 100);
  EXPECT_DOUBLE_EQ(c.train.loss_weights.alpha, 6.299);
  EXPECT_FALSE(c.ga);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RejectsUnknownKeysWithPath) {
  EXPECT_EQ(config_error({{"epochs", 3}}), "unknown key epochs");
  EXPECT_EQ(config_error({{"train", {{"epoch", 3}}}}), "unknown key train.epoch");
  EXPECT_EQ(config_error({{"network", {{"rsg", {{"k", 3}}}}}}), "unknown key network.rsg.k");
  EXPECT_EQ(config_error({{"ga", {{"surrogate", {{"beta", 1}}}}}}), "unknown key ga.surrogate.beta");
}

TEST(Config, RejectsWrongTypesAndEnums) {
  EXPECT_EQ(config_error({{"train", {{"epochs", "many"}}}}), "train.epochs has the wrong type");
  EXPECT_EQ(config_error({{"train", 5}}), "train must be an object");
  EXPECT_NE(config_error({{"task", "imagenet-lt"}}).find("imagenet-lt"), std::string::npos);
  EXPECT_NE(config_error({{"network", {{"backbone", "vit"}}}}).find("vit"), std::string::npos);
  EXPECT_NE(config_error({{"train", {{"schedule", "linear"}}}}).find("linear"), std::string::npos);
}

TEST(Config, ValidationCatchesInconsistentValues) {
  EXPECT_NE(config_error({{"train", {{"epochs", 10}, {"t_th", 11}, {"step_milestones", json::array()}}}}), "");
  EXPECT_NE(config_error({{"train", {{"loss_weights", {{"alpha", -1}}}}}}), "");
  EXPECT_NE(config_error({{"longtail", {{"beta", 0.5}}}}), "");
  EXPECT_NE(config_error({{"task", "cifar10-lt"}}), "");
  EXPECT_NE(config_error({{"task", "arrays"}, {"data", {{"train_dir", "x"}}}}), "");
  EXPECT_NE(config_error({{"ga", {{"population_size", 1}}}}), "");
  EXPECT_EQ(config_error({{"task", "cifar100-lt"}, {"data", {{"root", "/data"}}}}), "");
}

TEST(Config, JsonRoundTrip) {
  const json in = {{"task", "synthetic"},
                   {"seed", 11},
                   {"name", "rt"},
                   {"longtail", {{"n_max", 300}, {"beta", 50}}},
                   {"network", {{"backbone", "resnet"}, {"classifier", "linear"}, {"rsg", {{"rare_rule", "fraction"}}}}},
                   {"train",
                    {{"epochs", 20}, {"t_th", 4}, {"schedule", "cosine_warm_restarts"}, {"step_milestones", {10, 15}}}},
                   {"ga", {{"population_size", 6}, {"surrogate", {{"alpha", 2.0}, {"lambda", 4.0}}}}}};
  const ExperimentConfig c = config_from_json(in);
  EXPECT_EQ(c.network.backbone, Backbone::ResNet);
  EXPECT_EQ(c.network.rsg.rare_rule, RareRule::Fraction);
  EXPECT_EQ(c.train.schedule, Schedule::CosineWarmRestarts);
  ASSERT_TRUE(c.ga && c.ga->surrogate);
  EXPECT_EQ(c.ga->surrogate->lambda, 4.0);
  const json out = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(out)), out);
}

TEST(Config, SeedPropagates) {
  ExperimentConfig c = config_from_json({{"ga", json::object()}});
  c.apply_seed(42);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.ga->search.seed, 42u);
  EXPECT_EQ(config_from_json({{"seed", 9}}).train.seed, 9u);
}

TEST(Config, LoadFileAndOutputRoot) {
  const auto dir = ltr::testing::scratch_dir("config_files");
  std::ofstream(dir / "good.json") << R"({"name": "alpha", "seed": 2})";
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_EQ(load_config(dir / "good.json").name, "alpha");
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_config(dir / "absent.json"), ConfigError);

  ExperimentConfig c = load_config(dir / "good.json");
  ::setenv("LTR_OUTPUT_ROOT", (dir / "root").c_str(), 1);
  EXPECT_EQ(resolve_output_dir(c), dir / "root" / "alpha");
  ::unsetenv("LTR_OUTPUT_ROOT");
  EXPECT_EQ(resolve_output_dir(c), std::filesystem::path("runs") / "alpha");
  c.output_dir = "/tmp/explicit";
  EXPECT_EQ(resolve_output_dir(c), std::filesystem::path("/tmp/explicit"));
}
