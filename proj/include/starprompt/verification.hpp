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
#include <string>

#include "starprompt/gradcheck.hpp"

namespace starprompt {

struct GradSuiteReport {
  std::size_t trials = 0;
  std::size_t composite_failures = 0;
  std::size_t redrawn = 0;  ///< graphs whose finite-difference reference was unstable
  double composite_max_rel_error = 0.0;
  double composite_tolerance = 1e-4;
  double stage2_max_rel_error = 0.0;
  double stage2_tolerance = 1e-3;
  std::size_t stage2_coordinates = 0;
  bool passed = false;
};

/// Random composite graph of the given depth over three parameters; returns
/// the gradient-check report for its scalar output.
GradCheckReport check_random_graph(std::uint64_t seed, std::size_t depth, double tol, double h = 1e-3);

/// Second-stage loss (cross-entropy through a 2-layer mini transformer plus
/// the second-level orthogonality term) checked w.r.t. Q, A and the head.
GradCheckReport check_stage2_loss(std::uint64_t seed, double tol);

/// True when central differences at h and h/2 agree to 1e-6 relative on every
/// coordinate; otherwise the graph sits in a region (a near-zero vector fed to
/// l2_normalize, a near-constant row fed to layer_norm) where the reference
/// itself is unreliable.
bool reference_is_stable(const GradCheckReport& at_h, const GradCheckReport& at_half_h);

/// trials random graphs with depth cycling through 1..6, then the stage-2 check.
/// A graph whose reference is unstable is redrawn from the next seed.
GradSuiteReport run_gradcheck_suite(std::uint64_t seed = 1993, std::size_t trials = 100);

}  // namespace starprompt
