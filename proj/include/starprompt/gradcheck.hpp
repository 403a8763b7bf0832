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

#include <functional>
#include <string>
#include <vector>

#include "starprompt/tensor.hpp"

namespace starprompt {

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Denominator floor for relative errors: gradients smaller than this are
/// compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-3;

enum class Stencil {
  two_point,   ///< (f(x+h) - f(x-h)) / 2h, truncation error O(h^2)
  four_point,  ///< (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h, truncation error O(h^4)
};

/// Compares reverse-mode gradients of a deterministic scalar function against
/// central differences with step h, coordinate by coordinate.
///
/// rel_error = |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
/// fn is re-evaluated for every perturbation and must rebuild its graph each
/// call. Parameters are restored bitwise afterwards. Never throws on mismatch;
/// inspect the report.
GradCheckReport grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params, double tol,
                           double h = 1e-3, Stencil stencil = Stencil::four_point);

}  // namespace starprompt
