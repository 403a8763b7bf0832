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
#include <span>
#include <vector>

#include "starprompt/encoders.hpp"
#include "starprompt/rng.hpp"
#include "starprompt/tensor.hpp"

namespace starprompt {

/// How second-level prompts condition the main transformer.
enum class ConditioningMode : std::uint8_t { residual = 0, prefix = 1 };

/// All learnable prompt state owned by one class.
struct ClassPrompts {
  int class_id = 0;
  int task = 0;
  Tensor prompt;         ///< first-level token p_c, 1 x d
  Tensor second;         ///< Q_c: L x d_prime (residual) or L x 2*P*d_prime (prefix keys then values)
  Tensor query_weights;  ///< A_c, 1 x d
  bool trainable = false;

  [[nodiscard]] std::uint64_t hash() const;
};

/// First- and second-level codebooks with the freeze discipline: extending
/// with a new task freezes every existing entry.
class PromptCodebooks {
 public:
  explicit PromptCodebooks(const EncoderConfig& config, ConditioningMode mode = ConditioningMode::residual,
                           std::size_t prefix_tokens = 5);

  /// New p_c ~ N(0, 0.02^2), Q_c = 0, A_c = 1. Throws ConfigError on a
  /// duplicate class id; existing entries are frozen and left untouched.
  void extend(std::span<const int> new_classes, int task, Rng& rng);
  void freeze_all();

  [[nodiscard]] bool contains(int class_id) const { return entries_.count(class_id) != 0; }
  [[nodiscard]] const ClassPrompts& at(int class_id) const;
  [[nodiscard]] ClassPrompts& at(int class_id);
  /// Class ids in insertion order.
  [[nodiscard]] const std::vector<int>& classes() const { return order_; }
  [[nodiscard]] std::vector<int> trainable_classes() const;
  [[nodiscard]] std::vector<int> classes_before(int task) const;

  [[nodiscard]] ConditioningMode mode() const { return mode_; }
  [[nodiscard]] std::size_t prefix_tokens() const { return prefix_tokens_; }
  [[nodiscard]] std::size_t layers() const { return layers_; }
  [[nodiscard]] std::size_t second_width() const;
  [[nodiscard]] const EncoderConfig& config() const { return config_; }

  /// Inserts a fully specified entry (checkpoint loading).
  void insert(ClassPrompts entry);

 private:
  EncoderConfig config_;
  ConditioningMode mode_;
  std::size_t prefix_tokens_;
  std::size_t layers_;
  std::map<int, ClassPrompts> entries_;
  std::vector<int> order_;
};

using ClassEmbeddings = std::map<int, ClassNameEmbedding>;

/// Cached class-prototype keys w_c (constants; no graph attached).
struct PrototypeKeys {
  std::vector<int> classes;
  Tensor matrix;  ///< classes.size() x d, unit rows
  int valid_through_task = -1;

  [[nodiscard]] std::size_t row_of(int class_id) const;
  [[nodiscard]] Tensor key(int class_id) const;
  [[nodiscard]] bool empty() const { return classes.empty(); }
};

/// Differentiable key for one class: text_encode([p_c; name]).
Tensor live_key(const PromptCodebooks& books, const FrozenStack& stack, const ClassEmbeddings& names, int class_id);

/// Keys of every class in the codebook, computed through the text encoder and detached.
PrototypeKeys compute_keys(const PromptCodebooks& books, const FrozenStack& stack, const ClassEmbeddings& names);

/// Keys from a fixed shared context token instead of learned prompts.
PrototypeKeys compute_static_keys(std::span<const int> classes, const FrozenStack& stack,
                                  const ClassEmbeddings& names, const Tensor& context_token);

/// Stand-in for a hand-written "a photo of a" context.
Tensor hand_crafted_context(const EncoderConfig& config);

enum class QueryMode : std::uint8_t {
  weighted = 0,      ///< <l2norm(z * A_c), w_c>
  weighted_raw = 1,  ///< <z * A_c, w_c>
  unweighted = 2,    ///< <z, w_c>
};

struct Selection {
  int class_id = -1;
  std::size_t index = 0;     ///< row in the key matrix
  double similarity = 0.0;   ///< sim of the chosen class
  std::vector<double> similarities;
  Tensor similarity_tensor;  ///< 1 x 1, differentiable w.r.t. the chosen A_c
};

/// Similarity of query z to key w under the given mode, as a 1 x 1 tensor.
Tensor query_similarity(const Tensor& z, const Tensor& query_weights, const Tensor& key, QueryMode mode);

/// Hard argmax over all cached keys; ties resolve to the lowest row.
Selection select(const PrototypeKeys& keys, const Tensor& z, const PromptCodebooks& books, QueryMode mode);
/// Variant with explicit query weights aligned with keys.classes (ignored when unweighted).
Selection select(const PrototypeKeys& keys, const Tensor& z, std::span<const Tensor> query_weights, QueryMode mode);

/// R = sim * Q_{c_k}, or R = Q_{c_k} without confidence modulation.
Tensor build_residual(const PromptCodebooks& books, const Selection& selection, bool confidence_modulation = true);

/// Splits the selected class's prefix-mode Q_c into per-layer key and value tokens.
PrefixPrompts prefix_tuning_condition(const PromptCodebooks& books, const Selection& selection);

/// "STARBOOK" | u32 version | u32 d | u32 L | u32 width | u8 mode | u32 prefix tokens | u32 count
/// | per class: u32 id, u32 task, u8 trainable, d f64 prompt, L*width f64 Q, d f64 A.
void save_codebooks(const std::filesystem::path& path, const PromptCodebooks& books);
PromptCodebooks load_codebooks(const std::filesystem::path& path, const EncoderConfig& config);

}  // namespace starprompt
