/*
 * Copyright 2026 The StarPrompt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "starprompt/errors.hpp"
#include "starprompt/experiment.hpp"
#include "starprompt/metrics.hpp"
#include "starprompt/trainer.hpp"
#include "starprompt/verification.hpp"

namespace sp = starprompt;

namespace {

struct CommonFlags {
  std::string seed;
  std::string out;
  std::string variant;
  std::string preset;
  bool quiet = false;

  [[nodiscard]] sp::ConfigEntries overrides() const {
    sp::ConfigEntries o;
    if (!preset.empty()) o.emplace_back("preset", preset);
    if (!seed.empty()) o.emplace_back("seeds", seed);
    if (!out.empty()) o.emplace_back("out", out);
    if (!variant.empty()) o.emplace_back("variant", variant);
    return o;
  }
};

sp::ProgressFn progress_printer(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::cerr << line << "\n"; };
}

void print_report(const sp::RunReport& r) {
  std::cout << "variant " << r.variant << "\n";
  for (const auto& s : r.seeds) {
    std::cout << "  seed " << s.seed << "  FAA " << sp::format_fixed(s.faa);
    if (s.final_forgetting) std::cout << "  FF " << sp::format_fixed(*s.final_forgetting);
    std::cout << "\n";
  }
  std::cout << "  FAA mean " << sp::format_fixed(r.faa.mean) << " std " << sp::format_fixed(r.faa.std) << "\n";
  if (r.final_forgetting) {
    std::cout << "  FF  mean " << sp::format_fixed(r.final_forgetting->mean) << " std "
              << sp::format_fixed(r.final_forgetting->std) << "\n";
  }
}

int cmd_run(const std::string& config_path, const CommonFlags& flags) {
  const sp::ExperimentConfig config = sp::load_config(config_path, flags.overrides());
  print_report(sp::run(config, progress_printer(flags.quiet)));
  return 0;
}

int cmd_ablate(const std::string& config_path, const CommonFlags& flags) {
  const sp::ExperimentConfig config = sp::load_config(config_path, flags.overrides());
  const auto reports = sp::ablate(config, progress_printer(flags.quiet));
  std::cout << sp::ablation_csv(reports);
  return 0;
}

int cmd_diag(const std::string& checkpoint, const std::string& stream_config, const CommonFlags& flags) {
  const sp::Trainer trainer = sp::Trainer::load(checkpoint);
  const sp::ExperimentConfig config = sp::load_config(stream_config, flags.overrides());
  const sp::ClassPool pool = sp::generate_pool(config.scenario, trainer.stack().config.input_dim());
  const std::uint64_t order_seed = flags.seed.empty() ? trainer.seed() : std::stoull(flags.seed);
  sp::TaskStream stream =
      sp::build_stream(pool, sp::class_order_for_seed(pool, order_seed), config.scenario.classes_per_task);
  stream.tasks.resize(static_cast<std::size_t>(trainer.tasks_trained()));
  const sp::RetrievalConfusion conf = sp::retrieval_confusion(trainer, stream, trainer.tasks_trained() - 1);
  const std::string csv = sp::matrix_csv(conf.matrix, "query_task");
  if (flags.out.empty()) {
    std::cout << csv;
  } else {
    std::filesystem::create_directories(flags.out);
    const auto path = std::filesystem::path(flags.out) / "retrieval_confusion.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw sp::IoError(path.string() + ": cannot open for writing");
    out << csv;
    std::cout << "wrote " << path.string() << "\n";
  }
  return 0;
}

int cmd_gradcheck(const CommonFlags& flags, std::size_t trials) {
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = flags.seed.empty() ? 1993 : std::stoull(flags.seed);
  const sp::GradSuiteReport r = sp::run_gradcheck_suite(seed, trials);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("composite graphs: %zu trials, %zu failures, max rel error %.3e (tol %.0e), %zu redrawn\n",
              r.trials, r.composite_failures, r.composite_max_rel_error, r.composite_tolerance, r.redrawn);
  std::printf("stage-2 loss:     %zu coordinates, max rel error %.3e (tol %.0e)\n", r.stage2_coordinates,
              r.stage2_max_rel_error, r.stage2_tolerance);
  std::printf("%s in %.1fs\n", r.passed ? "PASS" : "FAIL", secs);
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-level prompt continual learning with mixture replay"};
  app.require_subcommand(1);
  app.fallthrough();
  CommonFlags flags;
  app.add_option("--seed", flags.seed, "Run seed(s), comma-separated; replaces the configured list");
  app.add_option("--out", flags.out, "Output directory");
  app.add_option("--variant", flags.variant, "full or an ablation name");
  app.add_option("--preset", flags.preset, "Hyperparameter preset");
  app.add_flag("-q,--quiet", flags.quiet, "No progress output");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("config", config_path, "Config file (key = value or JSON)")->required();

  auto* ablate = app.add_subcommand("ablate", "Run the full method and every ablation");
  ablate->add_option("config", config_path, "Config file")->required();

  std::string checkpoint;
  std::string stream_config;
  auto* diag = app.add_subcommand("diag", "Retrieval confusion of a saved checkpoint");
  diag->add_option("checkpoint", checkpoint, "Checkpoint directory")->required();
  diag->add_option("stream", stream_config, "Config file describing the task stream")->required();

  std::size_t trials = 100;
  auto* grad = app.add_subcommand("gradcheck", "Reverse-mode vs finite-difference verification");
  grad->add_option("--trials", trials, "Random composite graphs");

  auto* keys = app.add_subcommand("config-keys", "List the accepted configuration keys");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, flags);
    if (*ablate) return cmd_ablate(config_path, flags);
    if (*diag) return cmd_diag(checkpoint, stream_config, flags);
    if (*grad) return cmd_gradcheck(flags, trials);
    if (*keys) {
      for (const auto& [k, doc] : sp::config_keys()) std::cout << k << "\t" << doc << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
