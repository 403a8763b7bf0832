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
#include "starprompt/hyperparams.hpp"

#include <array>

#include "starprompt/errors.hpp"

namespace starprompt {

void Hyperparams::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0.0)) throw ConfigError(std::string("hyperparams: ") + field + " must be positive");
  };
  positive(static_cast<double>(epochs_main), "epochs_main");
  positive(lr_stage1, "lr_stage1");
  positive(lr_stage2, "lr_stage2");
  positive(static_cast<double>(components), "components");
  positive(static_cast<double>(n_replay), "n_replay");
  positive(static_cast<double>(batch_size), "batch_size");
  positive(static_cast<double>(prefix_tokens), "prefix_tokens");
  if (lambda_stage1 < 0.0 || lambda_stage2 < 0.0) throw ConfigError("hyperparams: lambda must be non-negative");
}

namespace {

struct PresetRow {
  const char* name;
  std::size_t e1;
  double lambda1;
  double lr1;
  std::size_t e2;
  double lambda2;
  double lr2;
  std::size_t batch;
};

constexpr std::array<PresetRow, 9> kFullScalePresets{{
    {"imagenet_r", 50, 30, 0.05, 10, 30, 0.001, 16},
    {"cifar100", 20, 10, 0.05, 10, 30, 0.01, 128},
    {"cars196", 50, 30, 0.05, 10, 30, 0.001, 128},
    {"cub200", 50, 30, 0.001, 50, 10, 0.001, 128},
    {"eurosat", 5, 30, 0.05, 5, 5, 0.1, 128},
    {"resisc45", 30, 10, 0.05, 30, 5, 0.1, 128},
    {"cropdiseases", 5, 30, 0.01, 5, 2, 0.01, 128},
    {"isic", 30, 5, 0.01, 30, 10, 0.01, 128},
    {"chestx", 30, 30, 0.05, 30, 5, 0.05, 128},
}};

}  // namespace

Hyperparams preset(std::string_view name) {
  if (name == "desk") return Hyperparams{};
  for (const auto& row : kFullScalePresets) {
    if (name == row.name) {
      Hyperparams hp;
      hp.epochs_main = row.e1;
      hp.lambda_stage1 = row.lambda1;
      hp.lr_stage1 = row.lr1;
      hp.epochs_replay = row.e2;
      hp.lambda_stage2 = row.lambda2;
      hp.lr_stage2 = row.lr2;
      hp.components = 5;
      hp.n_replay = 256;
      hp.batch_size = row.batch;
      return hp;
    }
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out{"desk"};
  for (const auto& row : kFullScalePresets) out.emplace_back(row.name);
  return out;
}

std::size_t preset_batch_size(std::string_view name) { return preset(name).batch_size; }

// ---------------------------------------------------------------- variants

void VariantFlags::validate() const {
  const int set = int(first_level_only) + int(no_first_level) + int(prefix_tuning) + int(no_replay) +
                  int(unimodal) + int(no_conf_mod);
  if (set > 1) throw ConfigError("variant flags conflict: at most one ablation may be selected");
}

std::string VariantFlags::name() const {
  validate();
  if (first_level_only) return "first_level_only";
  if (no_first_level) return "no_first_level";
  if (prefix_tuning) return "prefix_tuning";
  if (no_replay) return "no_replay";
  if (unimodal) return "unimodal";
  if (no_conf_mod) return "no_conf_mod";
  return "full";
}

VariantFlags VariantFlags::from_name(std::string_view name) {
  VariantFlags f;
  if (name == "full") return f;
  if (name == "first_level_only") f.first_level_only = true;
  else if (name == "no_first_level") f.no_first_level = true;
  else if (name == "prefix_tuning") f.prefix_tuning = true;
  else if (name == "no_replay") f.no_replay = true;
  else if (name == "unimodal") f.unimodal = true;
  else if (name == "no_conf_mod") f.no_conf_mod = true;
  else throw ConfigError("unknown variant '" + std::string(name) + "'");
  return f;
}

std::vector<std::string> VariantFlags::all_names() {
  return {"full", "first_level_only", "no_first_level", "prefix_tuning", "no_replay", "unimodal", "no_conf_mod"};
}

// ---------------------------------------------------------------- enum text

std::string to_string(CovarianceType v) { return v == CovarianceType::full ? "full" : "diagonal"; }

std::string to_string(QueryMode v) {
  switch (v) {
    case QueryMode::weighted: return "weighted";
    case QueryMode::weighted_raw: return "weighted_raw";
    case QueryMode::unweighted: return "unweighted";
  }
  return "weighted";
}

std::string to_string(OrthoMode v) { return v == OrthoMode::raw ? "raw" : "absolute"; }

std::string to_string(ResidualTarget v) { return v == ResidualTarget::cls_only ? "cls_only" : "all_tokens"; }

CovarianceType parse_covariance(std::string_view s) {
  if (s == "diagonal") return CovarianceType::diagonal;
  if (s == "full") return CovarianceType::full;
  throw ConfigError("unknown covariance type '" + std::string(s) + "'");
}

QueryMode parse_query_mode(std::string_view s) {
  if (s == "weighted") return QueryMode::weighted;
  if (s == "weighted_raw") return QueryMode::weighted_raw;
  if (s == "unweighted") return QueryMode::unweighted;
  throw ConfigError("unknown query mode '" + std::string(s) + "'");
}

OrthoMode parse_ortho_mode(std::string_view s) {
  if (s == "absolute") return OrthoMode::absolute;
  if (s == "raw") return OrthoMode::raw;
  throw ConfigError("unknown ortho mode '" + std::string(s) + "'");
}

ResidualTarget parse_residual_target(std::string_view s) {
  if (s == "all_tokens") return ResidualTarget::all_tokens;
  if (s == "cls_only") return ResidualTarget::cls_only;
  throw ConfigError("unknown residual target '" + std::string(s) + "'");
}

}  // namespace starprompt
