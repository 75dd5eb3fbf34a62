// Copyright 2026 The tilevit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tilevit/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Sliding-window teacher / single-pass student toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "run configuration file")
      ->required();
  auto* seed_opt = app.add_option("--seed", seed, "overrides train.seed");
  app.add_option("--threads", threads, "worker threads")
      ->check(CLI::PositiveNumber);

  auto* precompute = app.add_subcommand("precompute", "store sliding-window teacher features");
  auto* train = app.add_subcommand("train", "distill the teacher store into a single-pass student");
  auto* eval = app.add_subcommand("eval", "open-vocabulary segmentation mIoU");
  std::string mode = "single_pass";
  eval->add_option("--mode", mode)->check(CLI::IsMember({"single_pass", "sliding_window"}));
  auto* bench = app.add_subcommand("bench", "inference time sweep over strides");
  auto* init = app.add_subcommand("init-params", "write a freshly initialised checkpoint");
  std::string init_output;
  init->add_option("--output", init_output, "defaults to model.checkpoint");
  auto* pca = app.add_subcommand("pca-viz", "PCA projection of teacher and single-pass features");
  std::string pca_image, pca_output;
  pca->add_option("--image", pca_image)->required();
  pca->add_option("--output", pca_output, "output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : tilevit::kUsage;
  }

  tilevit::CommandContext ctx;
  ctx.threads = threads;
  ctx.out = &std::cout;
  ctx.err = &std::cerr;
  if (*seed_opt) ctx.seed = seed;
  return tilevit::run_guarded(ctx, [&]() -> int {
    ctx.config = tilevit::load_run_config(config_path);
    if (*precompute) return tilevit::cmd_precompute(ctx);
    if (*train) return tilevit::cmd_train(ctx);
    if (*eval)
      return tilevit::cmd_eval(ctx, mode == "single_pass"
                                     ? tilevit::InferenceMode::single_pass
                                     : tilevit::InferenceMode::sliding_window);
    if (*bench) return tilevit::cmd_bench(ctx);
    if (*init) return tilevit::cmd_init_params(ctx, init_output);
    return tilevit::cmd_pca_viz(ctx, pca_image, pca_output);
  });
}
