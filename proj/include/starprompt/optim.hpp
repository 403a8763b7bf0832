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
#include <span>
#include <vector>

#include "starprompt/tensor.hpp"

namespace starprompt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list.
///
/// Parameters are updated in place through Tensor::mutable_data, so they must
/// be leaves. A parameter without an accumulated gradient is treated as having
/// a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  /// Applies one update from the parameters' current gradients. Throws
  /// NumericError naming the parameter if any gradient entry is non-finite.
  void step();
  void zero_grad();

  [[nodiscard]] std::int64_t steps() const { return step_; }
  [[nodiscard]] const AdamConfig& config() const { return config_; }
  [[nodiscard]] std::span<const Tensor> params() const { return params_; }
  [[nodiscard]] std::span<const double> first_moment(std::size_t i) const { return m_.at(i); }
  [[nodiscard]] std::span<const double> second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

}  // namespace starprompt
