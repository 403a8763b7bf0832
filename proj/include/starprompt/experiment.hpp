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
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "starprompt/encoders.hpp"
#include "starprompt/hyperparams.hpp"
#include "starprompt/metrics.hpp"
#include "starprompt/scenario.hpp"

namespace starprompt {

struct ExperimentConfig {
  ScenarioSpec scenario;
  std::string preset = "desk";
  Hyperparams hyperparams = starprompt::preset("desk");  ///< preset with overrides applied
  VariantFlags variant;
  std::vector<std::uint64_t> seeds{1993, 1996, 1997};
  std::filesystem::path out;
  EncoderConfig encoder;
  std::uint64_t encoder_seed = 2024;
  bool save_checkpoints = false;

  void validate() const;
};

/// Documented configuration keys, in the order they are listed by `--help-config`.
const std::vector<std::pair<std::string, std::string>>& config_keys();

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Parses flat "key = value" text ('#' starts a comment) or a JSON object
/// (nested objects flatten to dotted keys). Unknown keys throw ConfigError.
/// Overrides win over the text; a preset (from either) is applied before
/// any hp.* key.
ExperimentConfig parse_config(const std::string& text, const ConfigEntries& overrides = {});
/// Reads and parses a file; IoError names the path when it cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path, const ConfigEntries& overrides = {});
/// Applies one key on top of an existing configuration.
void apply_config_key(ExperimentConfig& config, const std::string& key, const std::string& value);

struct RunReport {
  std::string variant;
  std::vector<SeedResult> seeds;
  Summary faa;
  std::optional<Summary> final_forgetting;
};

using ProgressFn = std::function<void(const std::string&)>;
/// Called after each task is trained, before evaluation.
using TaskObserver = std::function<void(const Trainer&, const TaskData&)>;

/// Trains and evaluates one seed on an already generated class pool.
SeedResult run_seed(const ExperimentConfig& config, const ClassPool& pool,
                    const std::shared_ptr<const FrozenStack>& stack, std::uint64_t seed,
                    const ProgressFn& progress = {},
                    const TaskObserver& observer = {});

/// All seeds of one configuration. Writes the report when config.out is set.
RunReport run(const ExperimentConfig& config, const ProgressFn& progress = {});

/// Full method plus every ablation; one report per variant under out/<variant>
/// and a table at out/ablation.csv.
std::vector<RunReport> ablate(const ExperimentConfig& config, const ProgressFn& progress = {});
std::string ablation_csv(const std::vector<RunReport>& reports);

}  // namespace starprompt
