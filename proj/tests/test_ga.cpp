// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "ltr/ga.hpp"

using namespace ltr;
using namespace ltr::ga;

namespace {

Population scored(const std::vector<std::array<double, 3>> &rows) {
  Population p;
  for (const auto &[a, l, f] : rows)
    p.push_back({a, l, f, 0});
  return p;
}

} // namespace

TEST(Evolve, ElitesSurviveVerbatim) {
  GAConfig cfg;
  cfg.population_size = 5;
  cfg.elitism_count = 2;
  const Population pop = scored({{1, 1, -5}, {2, 2, 0.9}, {3, 3, 0.1}, {4, 4, 0.95}, {5, 5, -1}});
  std::mt19937_64 rng(1);
  const Population next = evolve(pop, cfg, rng);
  ASSERT_EQ(next.size(), 5u);
  EXPECT_EQ(next[0].alpha, 4.0);
  EXPECT_EQ(*next[0].fitness, 0.95);
  EXPECT_EQ(next[1].alpha, 2.0);
  for (std::size_t i = 2; i < next.size(); ++i)
    EXPECT_FALSE(next[i].fitness);
  for (const auto &ind : next)
    EXPECT_EQ(ind.generation, 1);
}

TEST(Evolve, IdenticalPopulationWithoutMutationIsStable) {
  GAConfig cfg;
  cfg.population_size = 6;
  cfg.mutation_std = 0.0;
  Population pop(6, Individual{2.5, 7.0, 0.3, 0});
  std::mt19937_64 rng(2);
  for (const auto &ind : evolve(pop, cfg, rng)) {
    EXPECT_EQ(ind.alpha, 2.5);
    EXPECT_EQ(ind.lambda, 7.0);
  }
}

TEST(Evolve, GenesStayInBounds) {
  GAConfig cfg;
  cfg.population_size = 20;
  cfg.mutation_std = 50.0;
  std::mt19937_64 rng(3);
  Population pop = initial_population(cfg, rng);
  for (int g = 0; g < 30; ++g) {
    for (auto &ind : pop) {
      ind.fitness = ind.alpha;
      EXPECT_GE(ind.alpha, 0.0);
      EXPECT_LE(ind.alpha, 10.0);
      EXPECT_GE(ind.lambda, 0.0);
      EXPECT_LE(ind.lambda, 10.0);
    }
    pop = evolve(pop, cfg, rng);
  }
}

TEST(Evolve, RequiresFitness) {
  GAConfig cfg;
  Population pop(3);
  std::mt19937_64 rng(4);
  EXPECT_THROW(evolve(pop, cfg, rng), std::invalid_argument);
}

TEST(Search, RecoversPlantedOptimum) {
  GAConfig cfg;
  cfg.population_size = 20;
  cfg.generations = 20;
  for (std::uint64_t seed : {0u, 1u, 2u, 3u, 4u}) {
    cfg.seed = seed;
    const auto r = search(cfg, quadratic_surrogate(3.0, 1.0));
    const auto &best = r.evaluated.front();
    EXPECT_LE(std::abs(best.alpha - 3.0), 0.5) << "seed " << seed;
    EXPECT_LE(std::abs(best.lambda - 1.0), 0.5) << "seed " << seed;
    ASSERT_EQ(r.best_per_generation.size(), 21u);
    for (std::size_t g = 1; g < r.best_per_generation.size(); ++g)
      EXPECT_GE(r.best_per_generation[g], r.best_per_generation[g - 1]);
  }
}

TEST(Search, ZeroGenerationsRanksInitialPopulation) {
  GAConfig cfg;
  cfg.generations = 0;
  cfg.seed = 9;
  int calls = 0;
  const auto r = search(cfg, [&](const Individual &i) {
    ++calls;
    return -i.alpha;
  });
  EXPECT_EQ(calls, cfg.population_size);
  ASSERT_EQ(r.evaluated.size(), static_cast<std::size_t>(cfg.population_size));
  for (std::size_t i = 1; i < r.evaluated.size(); ++i)
    EXPECT_GE(*r.evaluated[i - 1].fitness, *r.evaluated[i].fitness);
  for (const auto &ind : r.evaluated)
    EXPECT_EQ(ind.generation, 0);
}

TEST(Search, DeterministicAndElitesNotReevaluated) {
  GAConfig cfg;
  cfg.seed = 5;
  int calls = 0;
  auto f = [&](const Individual &i) {
    ++calls;
    return quadratic_surrogate(3, 1)(i);
  };
  const auto a = search(cfg, f);
  EXPECT_EQ(calls, cfg.population_size + cfg.generations * (cfg.population_size - cfg.elitism_count));
  const auto b = search(cfg, f);
  ASSERT_EQ(a.evaluated.size(), b.evaluated.size());
  for (std::size_t i = 0; i < a.evaluated.size(); ++i) {
    EXPECT_EQ(a.evaluated[i].alpha, b.evaluated[i].alpha);
    EXPECT_EQ(a.evaluated[i].lambda, b.evaluated[i].lambda);
    EXPECT_EQ(*a.evaluated[i].fitness, *b.evaluated[i].fitness);
  }
}

TEST(Report, TopKRowsAndJson) {
  GAConfig cfg;
  cfg.population_size = 4;
  cfg.elitism_count = 1;
  cfg.generations = 0;
  const auto small = search(cfg, quadratic_surrogate(3, 1));
  const std::string csv = top_k_csv(small, 10);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  cfg.population_size = 20;
  const auto big = search(cfg, quadratic_surrogate(3, 1));
  const std::string csv2 = top_k_csv(big, 10);
  EXPECT_EQ(std::count(csv2.begin(), csv2.end(), '\n'), 11);
  EXPECT_EQ(csv2.rfind("rank,alpha,lambda,fitness,generation\n1,", 0), 0u);
  const auto j = to_json(big.evaluated.front());
  EXPECT_EQ(j["mode"], "sequential");
  EXPECT_TRUE(j["fitness"].is_number());
}

TEST(Config, RejectsInvalidSettings) {
  GAConfig cfg;
  cfg.population_size = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.elitism_count = cfg.population_size;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.elitism_count = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.crossover_rate = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(GAConfig{}.validate());
}
