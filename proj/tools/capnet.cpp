// Copyright 2026 The CapNet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// capnet: dataset generation, training, evaluation, sweeps and reports.
//
// Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "capnet/experiment.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Capacity networks for multiple-instance regression"};
  app.set_version_flag("--version", std::string(capnet::kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config, out = "out", metric, checkpoint, dataset, split = "test";
  std::size_t jobs = 1, k = 5;
  std::uint64_t seed = 1;
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  auto* gen = app.add_subcommand("generate", "Generate a dataset from a spec JSON");
  gen->add_option("--config", config, "Dataset spec JSON")->required();
  gen->add_option("--out", out, "Output directory");

  auto* train = app.add_subcommand("train", "Train one model from a run config JSON");
  train->add_option("--config", config, "Run config JSON")->required();
  train->add_option("--out", out, "Output directory");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file or training output directory")
      ->required();
  eval->add_option("--dataset", dataset, "Dataset directory")->required();
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--metric", metric, "Comma list of mse,intermediates,permsens,accuracy")
      ->required();
  eval->add_option("--k", k, "Permutations for permsens");
  eval->add_option("--seed", seed, "Permutation seed for permsens");
  eval->add_option("--out", out, "Output directory");

  auto* sweep = app.add_subcommand("sweep", "Train a grid of models and seeds");
  sweep->add_option("--config", config, "Sweep matrix JSON")->required();
  sweep->add_option("--out", out, "Output directory");
  sweep->add_option("--jobs", jobs, "Cells trained concurrently")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Collect training runs into plot-ready CSVs");
  report->add_option("--config", config, "Report JSON {\"runs\": {name: dir}}")->required();
  report->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  std::ostream null_stream(nullptr);
  std::ostream& log = quiet ? null_stream : std::cerr;
  try {
    if (*gen) {
      capnet::cmd_generate(config, out, log);
    } else if (*train) {
      const auto a = capnet::cmd_train(config, out, log);
      std::cout << "final_val_mse " << capnet::format_double(a.final_val_mse) << "\n";
    } else if (*eval) {
      capnet::EvalOptions opt;
      opt.checkpoint = checkpoint;
      opt.dataset = dataset;
      opt.split = capnet::parse_split(split);
      opt.metrics = capnet::parse_metrics(metric);
      opt.k = k;
      opt.seed = seed;
      capnet::cmd_eval(opt, out, log);
    } else if (*sweep) {
      const auto r = capnet::cmd_sweep(config, out, jobs, log);
      std::cout << r.table;
    } else if (*report) {
      capnet::cmd_report(config, out, log);
    }
  } catch (const capnet::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const capnet::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const capnet::IntegrityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
