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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "starprompt/encoders.hpp"
#include "starprompt/gmm.hpp"
#include "starprompt/hyperparams.hpp"
#include "starprompt/objectives.hpp"
#include "starprompt/prompts.hpp"
#include "starprompt/rng.hpp"
#include "starprompt/tensor.hpp"

namespace starprompt {

/// One task of a class-incremental stream. Inputs are rows of length
/// EncoderConfig::input_dim().
struct TaskData {
  int index = 0;
  std::vector<int> classes;
  Tensor train_x;
  std::vector<int> train_y;
  Tensor test_x;
  std::vector<int> test_y;
};

struct TaskStream {
  std::vector<TaskData> tasks;
  std::map<int, std::string> class_names;

  /// Disjoint class sets, labels inside their task, matching row counts.
  void validate(std::size_t input_dim) const;
  [[nodiscard]] std::size_t total_classes() const;
  /// Task index owning each class id.
  [[nodiscard]] std::map<int, int> class_to_task() const;
};

struct StageLog {
  std::vector<double> stage1_main;    ///< mean loss per epoch
  std::vector<double> stage1_replay;
  std::vector<double> stage2_main;
  std::vector<double> stage2_replay;
  double stage2_train_accuracy = 0.0;  ///< head-t readout on the task's training set
};

struct Prediction {
  int class_id = -1;
  int selected_class = -1;  ///< class whose second-level prompt was used (-1 when none)
  std::vector<double> logits;
};

/// Trainer state for one run: codebooks, key cache, heads and both MoG banks
/// on top of a shared frozen stack.
class Trainer {
 public:
  Trainer(std::shared_ptr<const FrozenStack> stack, Hyperparams hp, VariantFlags variant, std::uint64_t seed);

  /// Runs the two-stage procedure on the next task. Throws StateError when
  /// task.index is not the next index and ConfigError when the task is empty.
  const StageLog& train_task(const TaskData& task, const std::map<int, std::string>& class_names);

  [[nodiscard]] Prediction predict(const Tensor& x) const;
  [[nodiscard]] std::vector<Prediction> predict_all(const Tensor& xs) const;
  /// Class whose key is retrieved for an input (vision query against all cached keys).
  [[nodiscard]] Selection route(const Tensor& x) const;

  [[nodiscard]] int tasks_trained() const { return tasks_trained_; }
  [[nodiscard]] const PromptCodebooks& codebooks() const { return books_; }
  [[nodiscard]] const PrototypeKeys& keys() const { return keys_; }
  [[nodiscard]] const ClassifierHeads& heads() const { return heads_; }
  [[nodiscard]] const MogBank& first_bank() const { return first_bank_; }
  [[nodiscard]] const MogBank& second_bank() const { return second_bank_; }
  [[nodiscard]] const ClassEmbeddings& class_embeddings() const { return names_; }
  [[nodiscard]] const std::map<int, int>& class_tasks() const { return class_task_; }
  [[nodiscard]] const std::vector<StageLog>& logs() const { return logs_; }
  [[nodiscard]] const Hyperparams& hyperparams() const { return hp_; }
  [[nodiscard]] const VariantFlags& variant() const { return variant_; }
  [[nodiscard]] const FrozenStack& stack() const { return *stack_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }

  /// Recomputes every key from the current codebook (for coherence checks).
  [[nodiscard]] PrototypeKeys recompute_keys() const;

  /// Writes codebooks.bin, heads.bin, mog_first.bin, mog_second.bin and meta.json.
  void save(const std::filesystem::path& dir, std::uint64_t stack_seed) const;
  /// Restores a checkpoint; the stack is rebuilt from the recorded config and seed.
  static Trainer load(const std::filesystem::path& dir);

 private:
  Tensor features_for(const Tensor& x, const Selection& sel) const;
  Conditioning conditioning_for(const Selection& sel) const;
  void stage1(const TaskData& task, const std::vector<Tensor>& z, StageLog& log);
  void stage1_replay(const TaskData& task, StageLog& log);
  void stage2(const TaskData& task, const std::vector<Tensor>& z, StageLog& log);
  void stage2_replay(StageLog& log);
  void refresh_keys();
  [[nodiscard]] Rng stream(std::uint64_t tag) const;
  [[nodiscard]] EmConfig em_config(int class_id, std::uint64_t stage) const;

  std::shared_ptr<const FrozenStack> stack_;
  Hyperparams hp_;
  VariantFlags variant_;
  std::uint64_t seed_;
  PromptCodebooks books_;
  PrototypeKeys keys_;
  ClassifierHeads heads_;
  MogBank first_bank_;
  MogBank second_bank_;
  ClassEmbeddings names_;
  std::map<int, std::string> class_names_;
  std::map<int, int> class_task_;
  std::vector<StageLog> logs_;
  int tasks_trained_ = 0;
};

}  // namespace starprompt
