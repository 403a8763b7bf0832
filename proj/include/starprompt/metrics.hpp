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
#include <optional>
#include <string>
#include <vector>

#include "starprompt/trainer.hpp"

namespace starprompt {

/// a[t][j]: accuracy on task j's test set after training task t (t >= j).
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t tasks = 0);

  void set(std::size_t after_task, std::size_t task, double accuracy);
  [[nodiscard]] double at(std::size_t after_task, std::size_t task) const;
  [[nodiscard]] bool has(std::size_t after_task, std::size_t task) const;
  [[nodiscard]] std::size_t tasks() const { return tasks_; }
  /// True when every entry with t >= j through row after_task is present.
  [[nodiscard]] bool complete_through(std::size_t after_task) const;

 private:
  std::size_t tasks_;
  std::vector<std::optional<double>> cells_;
};

/// Mean of the final row. Throws StateError if that row is incomplete.
double faa(const AccuracyMatrix& a);
/// Mean over j < T of max_{t<T} a[t][j] - a[T][j]. Throws StateError for a
/// single task or a missing entry.
double final_forgetting(const AccuracyMatrix& a);

/// One test prediction, tagged with when it was made.
struct PredictionRecord {
  int after_task = 0;
  int task = 0;
  int label = 0;
  int predicted = 0;
  int selected_class = -1;
};

/// Accuracy matrix rebuilt from raw prediction records.
AccuracyMatrix accuracy_from_records(const std::vector<PredictionRecord>& records, std::size_t tasks);

/// C[i][j]: fraction of task-i test queries whose selected key belongs to task j.
struct RetrievalConfusion {
  int at_task = 0;
  std::vector<std::vector<double>> matrix;
};

/// Routes every test query of tasks 0..at_task through the trainer's key
/// selection. at_task must equal the last trained task.
RetrievalConfusion retrieval_confusion(const Trainer& trainer, const TaskStream& stream, int at_task);
/// Confusion from prediction records made after at_task.
RetrievalConfusion retrieval_confusion(const std::vector<PredictionRecord>& records,
                                       const std::map<int, int>& class_task, int at_task);

/// Predicts every test sample of tasks 0..after_task, appends the records and
/// fills row after_task of the matrix.
void evaluate_after_task(const Trainer& trainer, const TaskStream& stream, int after_task, AccuracyMatrix& matrix,
                         std::vector<PredictionRecord>& records);

struct SeedResult {
  std::uint64_t seed = 0;
  AccuracyMatrix accuracy;
  std::vector<PredictionRecord> records;
  RetrievalConfusion final_confusion;
  /// Fraction of task-0 test queries routed to a task-0 key, after each task.
  std::vector<double> first_task_precision;
  double faa = 0.0;
  std::optional<double> final_forgetting;
  std::vector<double> stage2_train_accuracy;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

Summary summarize(const std::vector<double>& values);

/// Writes accuracy_seed<S>.csv, confusion_seed<S>.csv, precision_seed<S>.csv
/// and summary.json under dir. Throws IoError with the offending path.
void write_report(const std::filesystem::path& dir, const std::string& variant,
                  const std::vector<SeedResult>& results);

/// CSV with a header row; empty cells mark entries above the diagonal.
std::string accuracy_csv(const AccuracyMatrix& a);
AccuracyMatrix parse_accuracy_csv(const std::string& text);
std::string matrix_csv(const std::vector<std::vector<double>>& m, const std::string& row_label);

/// "%.6f".
std::string format_fixed(double v);

}  // namespace starprompt
