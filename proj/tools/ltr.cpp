// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ltr.cpp
 * @brief  Command-line front end: ltr make-lt | train | eval | ga.
 */
#include <iostream>

#include <CLI11.hpp>

#include "ltr/cli.hpp"

int main(int argc, char **argv) {
  CLI::App app{"Long-tailed recognition toolkit"};
  app.require_subcommand(1);
  ltr::cli::Args args;
  std::uint64_t seed = 0;
  int epochs = 0;

  auto common = [&](CLI::App *sub) {
    sub->add_option("--config", args.config, "experiment config (JSON)");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", args.out, "output directory");
    sub->add_flag("--quiet", args.quiet, "suppress progress lines");
  };

  auto *make_lt = app.add_subcommand("make-lt", "build a long-tailed split manifest");
  common(make_lt);
  make_lt->get_option("--config")->required();

  auto *train = app.add_subcommand("train", "train a model and write history, plots and checkpoints");
  common(train);
  train->get_option("--config")->required();
  train->add_flag("--resume", args.resume, "continue from checkpoint_last.ltr in the output directory");
  train->add_option("--epochs", epochs, "stop after this many completed epochs");

  auto *eval = app.add_subcommand("eval", "evaluate a checkpoint");
  common(eval);
  eval->add_option("--checkpoint", args.checkpoint, "checkpoint file")->required();
  eval->add_option("--split", args.split, "test or train")->check(CLI::IsMember({"test", "train"}));

  auto *ga = app.add_subcommand("ga", "genetic search over the SCL / LDAM loss weights");
  common(ga);
  ga->get_option("--config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e);
  }
  for (auto *sub : {make_lt, train, eval, ga}) {
    if (sub->count("--seed"))
      args.seed = seed;
  }
  if (train->count("--epochs"))
    args.epochs = epochs;

  using namespace ltr::cli;
  return guarded(
      [&] {
        if (*make_lt)
          return cmd_make_lt(args, std::cout);
        if (*train)
          return cmd_train(args, std::cout, std::cerr);
        if (*eval)
          return cmd_eval(args, std::cout);
        return cmd_ga(args, std::cout, std::cerr);
      },
      std::cerr);
}
