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

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "starprompt/encoders.hpp"
#include "starprompt/gmm.hpp"
#include "starprompt/objectives.hpp"
#include "starprompt/prompts.hpp"

namespace starprompt {

struct Hyperparams {
  std::size_t epochs_main = 10;    ///< E1: epochs over real samples, per stage
  std::size_t epochs_replay = 5;   ///< E2: epochs over generated samples, per stage
  double lambda_stage1 = 1.0;
  double lambda_stage2 = 1.0;
  double lr_stage1 = 0.05;
  double lr_stage2 = 0.003;
  std::size_t components = 5;      ///< M
  std::size_t n_replay = 256;
  std::size_t batch_size = 16;

  CovarianceType covariance = CovarianceType::diagonal;
  QueryMode query = QueryMode::weighted;
  OrthoMode ortho = OrthoMode::absolute;
  ResidualTarget residual_target = ResidualTarget::all_tokens;
  std::size_t prefix_tokens = 5;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Named presets: the paper's per-dataset settings plus "desk" for the
/// synthetic scenarios. Throws ConfigError on an unknown name.
Hyperparams preset(std::string_view name);
std::vector<std::string> preset_names();
/// Batch size used with each dataset preset.
std::size_t preset_batch_size(std::string_view name);

/// Ablation switchboard; at most one flag may be set.
struct VariantFlags {
  bool first_level_only = false;
  bool no_first_level = false;
  bool prefix_tuning = false;
  bool no_replay = false;
  bool unimodal = false;
  bool no_conf_mod = false;

  void validate() const;
  /// "full" when no flag is set.
  [[nodiscard]] std::string name() const;
  static VariantFlags from_name(std::string_view name);
  static std::vector<std::string> all_names();
};

std::string to_string(CovarianceType v);
std::string to_string(QueryMode v);
std::string to_string(OrthoMode v);
std::string to_string(ResidualTarget v);
CovarianceType parse_covariance(std::string_view s);
QueryMode parse_query_mode(std::string_view s);
OrthoMode parse_ortho_mode(std::string_view s);
ResidualTarget parse_residual_target(std::string_view s);

}  // namespace starprompt
