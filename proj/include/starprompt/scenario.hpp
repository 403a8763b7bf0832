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
#include <map>
#include <string>
#include <vector>

#include "starprompt/trainer.hpp"

namespace starprompt {

enum class ScenarioKind : std::uint8_t { separable = 0, bimodal = 1, feature_file = 2 };

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::separable;
  std::size_t num_tasks = 5;
  std::size_t classes_per_task = 4;
  std::size_t train_per_class = 24;
  std::size_t test_per_class = 16;
  double separation = 3.0;       ///< per-coordinate scale of class centers
  double noise = 1.0;            ///< per-coordinate sample noise
  double mode_separation = 3.0;  ///< bimodal: per-coordinate scale of the offset between the two modes
  std::uint64_t seed = 7;
  std::filesystem::path path;    ///< feature_file source

  void validate() const;
};

std::string to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(const std::string& s);

/// Per-class samples before they are grouped into tasks.
struct ClassPool {
  std::vector<int> classes;  ///< ascending ids
  std::map<int, std::string> names;
  std::map<int, std::vector<std::vector<double>>> train;
  std::map<int, std::vector<std::vector<double>>> test;
  std::size_t dim = 0;
};

/// Seeded Gaussian clusters (or a feature file split per class). Deterministic
/// in the spec alone.
ClassPool generate_pool(const ScenarioSpec& spec, std::size_t input_dim);

/// Groups classes into consecutive tasks following class_order.
TaskStream build_stream(const ClassPool& pool, const std::vector<int>& class_order, std::size_t classes_per_task);

/// Class order for a run seed: the identity for seed 0, a seeded shuffle otherwise.
std::vector<int> class_order_for_seed(const ClassPool& pool, std::uint64_t seed);

/// generate_pool + build_stream in the pool's natural class order.
TaskStream generate_scenario(const ScenarioSpec& spec, std::size_t input_dim);

}  // namespace starprompt
