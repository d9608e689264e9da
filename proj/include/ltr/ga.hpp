// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ga.hpp
 * @brief  Genetic search over the (alpha, lambda) loss weights: elitism,
 *         size-2 tournaments, uniform crossover and clipped Gaussian mutation.
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltr/tensor.hpp"

namespace ltr::ga {

struct GAConfig {
  int population_size = 12;
  int generations = 8;
  double lower = 0.0;
  double upper = 10.0;
  double mutation_std = 0.8;
  double crossover_rate = 0.7;
  int elitism_count = 2;
  int eval_epochs = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (population_size < 2)
      throw ConfigError("population_size must be at least 2");
    if (generations < 0)
      throw ConfigError("generations must be non-negative");
    if (elitism_count < 1 || elitism_count >= population_size)
      throw ConfigError("elitism_count must lie in [1, population_size)");
    if (!(lower < upper))
      throw ConfigError("gene bounds must satisfy lower < upper");
    if (mutation_std < 0.0)
      throw ConfigError("mutation_std must be non-negative");
    if (crossover_rate < 0.0 || crossover_rate > 1.0)
      throw ConfigError("crossover_rate must lie in [0, 1]");
    if (eval_epochs < 1)
      throw ConfigError("eval_epochs must be at least 1");
  }
};

struct Individual {
  double alpha = 0.0;
  double lambda = 0.0;
  std::optional<double> fitness;
  int generation = 0;
};

using Population = std::vector<Individual>;
using FitnessFn = std::function<double(const Individual &)>;

inline Population initial_population(const GAConfig &cfg, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> gene(cfg.lower, cfg.upper);
  Population pop(static_cast<std::size_t>(cfg.population_size));
  for (auto &ind : pop) {
    ind.alpha = gene(rng);
    ind.lambda = gene(rng);
  }
  return pop;
}

/// Indices sorted by descending fitness; ties keep population order.
inline std::vector<std::size_t> rank(const Population &pop) {
  std::vector<std::size_t> idx(pop.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return *pop[a].fitness > *pop[b].fitness; });
  return idx;
}

inline Population evolve(const Population &pop, const GAConfig &cfg, std::mt19937_64 &rng) {
  for (const auto &ind : pop)
    if (!ind.fitness)
      throw std::invalid_argument("evolve needs every individual evaluated");
  const auto order = rank(pop);
  const int next_gen = pop.empty() ? 0 : pop.front().generation + 1;
  Population next;
  for (int e = 0; e < cfg.elitism_count && e < static_cast<int>(pop.size()); ++e)
    next.push_back(pop[order[static_cast<std::size_t>(e)]]);

  std::uniform_int_distribution<std::size_t> pick(0, pop.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto tournament = [&]() -> const Individual & {
    const Individual &a = pop[pick(rng)];
    const Individual &b = pop[pick(rng)];
    return *b.fitness > *a.fitness ? b : a;
  };
  auto mutate = [&](double gene) {
    if (cfg.mutation_std > 0.0)
      gene += std::normal_distribution<double>(0.0, cfg.mutation_std)(rng);
    return std::clamp(gene, cfg.lower, cfg.upper);
  };

  while (next.size() < pop.size()) {
    const Individual &p1 = tournament();
    const Individual &p2 = tournament();
    Individual child = p1;
    if (coin(rng) < cfg.crossover_rate) {
      child.alpha = coin(rng) < 0.5 ? p1.alpha : p2.alpha;
      child.lambda = coin(rng) < 0.5 ? p1.lambda : p2.lambda;
    }
    child.alpha = mutate(child.alpha);
    child.lambda = mutate(child.lambda);
    child.fitness.reset();
    child.generation = next_gen;
    next.push_back(child);
  }
  for (auto &ind : next)
    ind.generation = next_gen;
  return next;
}

struct SearchResult {
  std::vector<Individual> evaluated;      ///< every evaluation, best first
  std::vector<double> best_per_generation;
  Population final_population;
};

/**
 * Runs the search with sequential evaluation. `on_eval` sees every
 * individual right after its fitness is computed. Elites keep their
 * fitness and are not re-evaluated.
 */
inline SearchResult search(const GAConfig &cfg, const FitnessFn &fitness,
                           const std::function<void(const Individual &)> &on_eval = {}) {
  cfg.validate();
  auto rng = make_rng(cfg.seed, 0x9a);
  SearchResult out;
  Population pop = initial_population(cfg, rng);
  auto evaluate_all = [&](Population &p) {
    for (auto &ind : p) {
      if (ind.fitness)
        continue;
      ind.fitness = fitness(ind);
      out.evaluated.push_back(ind);
      if (on_eval)
        on_eval(ind);
    }
    out.best_per_generation.push_back(*p[rank(p).front()].fitness);
  };
  evaluate_all(pop);
  for (int g = 0; g < cfg.generations; ++g) {
    pop = evolve(pop, cfg, rng);
    evaluate_all(pop);
  }
  std::stable_sort(out.evaluated.begin(), out.evaluated.end(),
                   [](const Individual &a, const Individual &b) { return *a.fitness > *b.fitness; });
  out.final_population = std::move(pop);
  return out;
}

/// Planted quadratic f = -(alpha - a*)^2 - (lambda - l*)^2 for checking the search itself.
inline FitnessFn quadratic_surrogate(double alpha_opt, double lambda_opt) {
  return [=](const Individual &ind) {
    return -(ind.alpha - alpha_opt) * (ind.alpha - alpha_opt) -
           (ind.lambda - lambda_opt) * (ind.lambda - lambda_opt);
  };
}

inline nlohmann::json to_json(const Individual &ind, const std::string &mode = "sequential") {
  return {{"generation", ind.generation},
          {"alpha", ind.alpha},
          {"lambda", ind.lambda},
          {"fitness", ind.fitness ? nlohmann::json(*ind.fitness) : nlohmann::json(nullptr)},
          {"mode", mode}};
}

/// Top-k table as CSV: rank, alpha, lambda, fitness, generation.
inline std::string top_k_csv(const SearchResult &r, std::size_t k = 10) {
  std::string out = "rank,alpha,lambda,fitness,generation\n";
  char buf[160];
  for (std::size_t i = 0; i < std::min(k, r.evaluated.size()); ++i) {
    const auto &ind = r.evaluated[i];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.10g,%d\n", i + 1, ind.alpha, ind.lambda,
                  *ind.fitness, ind.generation);
    out += buf;
  }
  return out;
}

} // namespace ltr::ga
