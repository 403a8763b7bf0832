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
#include <vector>

#include "starprompt/rng.hpp"
#include "starprompt/tensor.hpp"

namespace starprompt {

enum class CovarianceType : std::uint8_t { diagonal = 0, full = 1 };

/// Mixture of Gaussians over fixed-width feature vectors.
struct Mog {
  std::vector<double> weights;                   // M, on the simplex
  std::vector<std::vector<double>> means;        // M x dim
  std::vector<std::vector<double>> covariances;  // diagonal: M x dim; full: M x (dim*dim) row-major
  CovarianceType type = CovarianceType::diagonal;

  [[nodiscard]] std::size_t components() const { return weights.size(); }
  [[nodiscard]] std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  /// Throws StateError when weights leave the simplex, shapes disagree, or a
  /// covariance is not positive definite.
  void validate() const;
};

struct EmConfig {
  std::size_t components = 5;
  std::size_t max_iters = 100;
  double tolerance = 1e-4;  ///< stop when the relative log-likelihood gain drops below this
  double variance_floor = 1e-6;
  std::uint64_t seed = 0;
  CovarianceType covariance = CovarianceType::diagonal;
};

struct EmResult {
  Mog model;
  /// Entry k is the total log-likelihood after k M-steps (entry 0: initialization).
  std::vector<double> log_likelihood;
  std::size_t iterations = 0;
  std::size_t reseeds = 0;
  bool converged = false;
};

/// Expectation-Maximization with farthest-point initialization. The component
/// count is reduced to the number of samples when fewer are given.
EmResult fit_em(const Tensor& samples, const EmConfig& config);

/// Per-sample log mixture density (log-sum-exp over components).
std::vector<double> log_densities(const Mog& mog, const Tensor& samples);
double log_likelihood(const Mog& mog, const Tensor& samples);
/// Posterior component probabilities, n x M row-major.
std::vector<double> responsibilities(const Mog& mog, const Tensor& samples);

/// n draws: component by categorical draw on the weights, then a Gaussian draw.
Tensor sample(const Mog& mog, std::size_t n, Rng& rng);

/// Per-class mixtures keyed by class id.
using MogBank = std::map<int, Mog>;

/// "STARMOGB" | u32 version | u32 count | per class: u32 id, u32 M, u32 dim,
/// u8 covariance type, M f64 weights, M*dim f64 means, covariance payload f64.
void save_mog_bank(const std::filesystem::path& path, const MogBank& bank);
MogBank load_mog_bank(const std::filesystem::path& path);

}  // namespace starprompt
