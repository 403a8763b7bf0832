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
#include <optional>
#include <vector>

#include "starprompt/tensor.hpp"

namespace starprompt {

/// On-disk layout (all little-endian):
///   "STARFEAT" | u32 version = 1 | u32 count | u32 dim
///   | count*dim f32 row-major features | count u32 labels
inline constexpr char kFeatureMagic[] = "STARFEAT";
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureSet {
  Tensor features;  // count x dim
  std::vector<std::uint32_t> labels;
};

void write_feature_file(const std::filesystem::path& path, const FeatureSet& set);

/// Reads and validates a feature file. When num_classes is given, every label
/// must be below it. Values are widened from f32.
FeatureSet load_feature_file(const std::filesystem::path& path, std::optional<std::uint32_t> num_classes = {});

}  // namespace starprompt
