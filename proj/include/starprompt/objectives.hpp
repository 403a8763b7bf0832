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
#include <span>
#include <vector>

#include "starprompt/gmm.hpp"
#include "starprompt/prompts.hpp"
#include "starprompt/rng.hpp"
#include "starprompt/tensor.hpp"

namespace starprompt {

/// One linear head per task over main-transformer features.
class ClassifierHeads {
 public:
  explicit ClassifierHeads(std::size_t width) : width_(width) {}

  /// Appends a zero-initialized, trainable head for the given classes.
  /// Tasks must be added in order 0, 1, 2, ...
  void add_task(int task, std::vector<int> classes);
  void set_trainable(int task, bool on);
  void freeze_all();

  [[nodiscard]] std::size_t tasks() const { return heads_.size(); }
  [[nodiscard]] std::size_t width() const { return width_; }
  [[nodiscard]] const std::vector<int>& classes(int task) const;
  /// Concatenated class order of all_logits.
  [[nodiscard]] std::vector<int> all_classes() const;
  [[nodiscard]] const Tensor& weight(int task) const;  // width x N
  [[nodiscard]] const Tensor& bias(int task) const;    // 1 x N
  [[nodiscard]] std::vector<Tensor> parameters(int task) const;
  [[nodiscard]] std::vector<Tensor> parameters_through(int task) const;

  /// B x N_task logits under one head.
  [[nodiscard]] Tensor logits(int task, const Tensor& features) const;
  /// B x (sum of N_t) logits from every head, in task order.
  [[nodiscard]] Tensor all_logits(const Tensor& features) const;

  [[nodiscard]] std::uint64_t hash(int task) const;

  /// "STARHEAD" | u32 version | u32 width | u32 tasks | per task: u32 N, N u32 class ids,
  /// u8 trainable, width*N f64 weight, N f64 bias.
  void save(const std::filesystem::path& path) const;
  static ClassifierHeads load(const std::filesystem::path& path);

 private:
  struct Head {
    std::vector<int> classes;
    Tensor weight;
    Tensor bias;
  };
  const Head& head(int task) const;

  std::size_t width_;
  std::vector<Head> heads_;
};

/// Mean negative log-likelihood of integer targets under row-wise softmax.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

/// Maps class ids to their positions in class_order; throws LabelError for
/// any label outside the set.
std::vector<std::size_t> label_positions(std::span<const int> labels, std::span<const int> class_order,
                                         const char* context);

/// Cross-entropy over <z_i, w_c> / tau, with the denominator running over the
/// rows of keys (ordered as key_classes).
Tensor ce_stage1(const Tensor& keys, std::span<const int> key_classes, const Tensor& z, std::span<const int> labels,
                 double tau);

/// Cross-entropy under the head of one task only.
Tensor ce_stage2(const ClassifierHeads& heads, const Tensor& features, std::span<const int> labels, int task);

enum class OrthoMode : std::uint8_t {
  absolute = 0,  ///< sum of |<normalized, normalized>|
  raw = 1,       ///< sum of raw inner products, as literally written
};

/// Sum over (current, past) pairs of first-level prompt similarities; 0 with no past classes.
Tensor ortho_first(const PromptCodebooks& books, std::span<const int> current, std::span<const int> past,
                   OrthoMode mode = OrthoMode::absolute);

/// Per-layer average of the same quantity over second-level prompt rows.
Tensor ortho_second(const PromptCodebooks& books, std::span<const int> current, std::span<const int> past,
                    OrthoMode mode = OrthoMode::absolute);

/// Synthetic features with labels, n per class, grouped by class.
struct ReplaySet {
  Tensor features;
  std::vector<int> labels;
};

/// Draws n samples from the mixture of every listed class. Throws StateError
/// when a class has no fitted mixture.
ReplaySet draw_replay(const MogBank& bank, std::span<const int> classes, std::size_t n, Rng& rng);

/// Rows [begin, begin + count) of a replay set, reordered by order.
ReplaySet replay_batch(const ReplaySet& set, std::span<const std::size_t> order, std::size_t begin,
                       std::size_t count);

/// First-level replay loss: stage-one cross-entropy on synthetic CLIP-space
/// features with the denominator over all seen classes.
Tensor gr_loss_first(const Tensor& keys, std::span<const int> key_classes, const ReplaySet& replay, double tau);
Tensor gr_loss_first(const Tensor& keys, std::span<const int> key_classes, const MogBank& bank, std::size_t n,
                     double tau, Rng& rng);

/// Second-level replay loss: cross-entropy over the concatenation of every head.
Tensor gr_loss_second(const ClassifierHeads& heads, const ReplaySet& replay);
Tensor gr_loss_second(const ClassifierHeads& heads, const MogBank& bank, std::size_t n, Rng& rng);

}  // namespace starprompt
