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
#include "starprompt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "starprompt/errors.hpp"

namespace starprompt {

GradCheckReport grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params, double tol, double h,
                           Stencil stencil) {
  for (Tensor& p : params) {
    if (!p.requires_grad()) {
      throw StateError("grad_check: parameter " + p.name() + " does not require grad");
    }
    p.zero_grad();
  }
  backward(fn());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) {
    analytic.push_back(p.grad());
    p.zero_grad();
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      auto at = [&](double offset) {
        values[j] = saved + offset;
        const double v = fn().item();
        values[j] = saved;
        return v;
      };
      double numeric = 0.0;
      if (stencil == Stencil::two_point) {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      } else {
        numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      }
      const double a = analytic[pi][j];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), kGradCheckFloor});
      const double rel = std::fabs(a - numeric) / denom;
      report.entries.push_back({pi, j, a, numeric, rel});
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace starprompt
