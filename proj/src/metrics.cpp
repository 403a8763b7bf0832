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
#include "starprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "starprompt/errors.hpp"

namespace starprompt {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks), cells_(tasks * tasks) {}

void AccuracyMatrix::set(std::size_t after_task, std::size_t task, double accuracy) {
  if (after_task >= tasks_ || task > after_task) {
    throw StateError("AccuracyMatrix: entry (" + std::to_string(after_task) + ", " + std::to_string(task) +
                     ") is outside the lower triangle");
  }
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw NumericError("AccuracyMatrix: accuracy outside [0, 1]");
  cells_[after_task * tasks_ + task] = accuracy;
}

bool AccuracyMatrix::has(std::size_t after_task, std::size_t task) const {
  return after_task < tasks_ && task < tasks_ && cells_[after_task * tasks_ + task].has_value();
}

double AccuracyMatrix::at(std::size_t after_task, std::size_t task) const {
  if (!has(after_task, task)) {
    throw StateError("AccuracyMatrix: entry (" + std::to_string(after_task) + ", " + std::to_string(task) +
                     ") is missing");
  }
  return *cells_[after_task * tasks_ + task];
}

bool AccuracyMatrix::complete_through(std::size_t after_task) const {
  for (std::size_t t = 0; t <= after_task && t < tasks_; ++t) {
    for (std::size_t j = 0; j <= t; ++j) {
      if (!has(t, j)) return false;
    }
  }
  return after_task < tasks_;
}

double faa(const AccuracyMatrix& a) {
  if (a.tasks() == 0) throw StateError("faa: empty accuracy matrix");
  const std::size_t last = a.tasks() - 1;
  double total = 0.0;
  for (std::size_t j = 0; j <= last; ++j) {
    if (!a.has(last, j)) throw StateError("faa: final row is incomplete");
    total += a.at(last, j);
  }
  return total / static_cast<double>(a.tasks());
}

double final_forgetting(const AccuracyMatrix& a) {
  if (a.tasks() < 2) throw StateError("final_forgetting: undefined for a single task");
  const std::size_t last = a.tasks() - 1;
  if (!a.complete_through(last)) throw StateError("final_forgetting: accuracy matrix is incomplete");
  double total = 0.0;
  for (std::size_t j = 0; j < last; ++j) {
    double best = a.at(j, j);
    for (std::size_t t = j + 1; t < last; ++t) best = std::max(best, a.at(t, j));
    total += best - a.at(last, j);
  }
  return total / static_cast<double>(last);
}

AccuracyMatrix accuracy_from_records(const std::vector<PredictionRecord>& records, std::size_t tasks) {
  std::vector<std::size_t> hits(tasks * tasks, 0);
  std::vector<std::size_t> counts(tasks * tasks, 0);
  for (const auto& r : records) {
    if (r.after_task < 0 || r.task < 0 || static_cast<std::size_t>(r.after_task) >= tasks || r.task > r.after_task) {
      throw StateError("accuracy_from_records: record outside the lower triangle");
    }
    const std::size_t k = static_cast<std::size_t>(r.after_task) * tasks + static_cast<std::size_t>(r.task);
    ++counts[k];
    if (r.predicted == r.label) ++hits[k];
  }
  AccuracyMatrix a(tasks);
  for (std::size_t t = 0; t < tasks; ++t) {
    for (std::size_t j = 0; j <= t; ++j) {
      const std::size_t k = t * tasks + j;
      if (counts[k] > 0) a.set(t, j, static_cast<double>(hits[k]) / static_cast<double>(counts[k]));
    }
  }
  return a;
}

namespace {

std::vector<std::vector<double>> normalize_rows(const std::vector<std::vector<std::size_t>>& counts) {
  std::vector<std::vector<double>> out(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const std::size_t total = std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0});
    out[i].assign(counts[i].size(), 0.0);
    if (total == 0) throw StateError("retrieval_confusion: task " + std::to_string(i) + " has no test queries");
    for (std::size_t j = 0; j < counts[i].size(); ++j) {
      out[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(total);
    }
  }
  return out;
}

}  // namespace

RetrievalConfusion retrieval_confusion(const Trainer& trainer, const TaskStream& stream, int at_task) {
  if (at_task < 0 || at_task >= trainer.tasks_trained() || at_task >= static_cast<int>(stream.tasks.size())) {
    throw StateError("retrieval_confusion: task " + std::to_string(at_task) + " has not been trained");
  }
  if (at_task != trainer.tasks_trained() - 1) {
    throw StateError("retrieval_confusion: the trainer has moved past task " + std::to_string(at_task));
  }
  const auto& owner = trainer.class_tasks();
  const std::size_t n = static_cast<std::size_t>(at_task) + 1;
  std::vector<std::vector<std::size_t>> counts(n, std::vector<std::size_t>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& xs = stream.tasks[i].test_x;
    for (std::size_t s = 0; s < xs.rows(); ++s) {
      const Selection sel = trainer.route(slice_rows(xs, s, 1));
      ++counts[i][static_cast<std::size_t>(owner.at(sel.class_id))];
    }
  }
  return RetrievalConfusion{at_task, normalize_rows(counts)};
}

RetrievalConfusion retrieval_confusion(const std::vector<PredictionRecord>& records,
                                       const std::map<int, int>& class_task, int at_task) {
  const std::size_t n = static_cast<std::size_t>(at_task) + 1;
  std::vector<std::vector<std::size_t>> counts(n, std::vector<std::size_t>(n, 0));
  for (const auto& r : records) {
    if (r.after_task != at_task || r.selected_class < 0) continue;
    const int owner = class_task.at(r.selected_class);
    if (owner > at_task) throw StateError("retrieval_confusion: key from an untrained task");
    ++counts[static_cast<std::size_t>(r.task)][static_cast<std::size_t>(owner)];
  }
  return RetrievalConfusion{at_task, normalize_rows(counts)};
}

void evaluate_after_task(const Trainer& trainer, const TaskStream& stream, int after_task, AccuracyMatrix& matrix,
                         std::vector<PredictionRecord>& records) {
  if (after_task >= trainer.tasks_trained()) {
    throw StateError("evaluate_after_task: task " + std::to_string(after_task) + " has not been trained");
  }
  for (int j = 0; j <= after_task; ++j) {
    const TaskData& task = stream.tasks[static_cast<std::size_t>(j)];
    const auto preds = trainer.predict_all(task.test_x);
    std::size_t correct = 0;
    for (std::size_t s = 0; s < preds.size(); ++s) {
      records.push_back(PredictionRecord{after_task, j, task.test_y[s], preds[s].class_id, preds[s].selected_class});
      if (preds[s].class_id == task.test_y[s]) ++correct;
    }
    matrix.set(static_cast<std::size_t>(after_task), static_cast<std::size_t>(j),
               static_cast<double>(correct) / static_cast<double>(preds.size()));
  }
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  // Shifted by the first value so identical inputs give that value and std 0 exactly.
  double shift = 0.0;
  for (double v : values) shift += v - values.front();
  const double mean = values.front() + shift / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return Summary{mean, std::sqrt(var / n)};
}

// ---------------------------------------------------------------- files

std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string accuracy_csv(const AccuracyMatrix& a) {
  std::ostringstream out;
  out << "after_task";
  for (std::size_t j = 0; j < a.tasks(); ++j) out << ",task_" << j;
  out << "\n";
  for (std::size_t t = 0; t < a.tasks(); ++t) {
    out << t;
    for (std::size_t j = 0; j < a.tasks(); ++j) {
      out << ",";
      if (a.has(t, j)) out << format_fixed(a.at(t, j));
    }
    out << "\n";
  }
  return out.str();
}

AccuracyMatrix parse_accuracy_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("accuracy csv: missing header");
  const std::size_t tasks = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  AccuracyMatrix a(tasks);
  std::size_t t = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    for (std::size_t j = 0; j < tasks; ++j) {
      if (!std::getline(row, cell, ',')) cell.clear();
      if (!cell.empty()) {
        try {
          a.set(t, j, std::stod(cell));
        } catch (const std::invalid_argument&) {
          throw FormatError("accuracy csv: bad cell '" + cell + "'");
        }
      }
    }
    ++t;
  }
  if (t != tasks) throw FormatError("accuracy csv: expected " + std::to_string(tasks) + " rows");
  return a;
}

std::string matrix_csv(const std::vector<std::vector<double>>& m, const std::string& row_label) {
  std::ostringstream out;
  out << row_label;
  for (std::size_t j = 0; j < m.size(); ++j) out << ",task_" << j;
  out << "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << i;
    for (double v : m[i]) out << "," << format_fixed(v);
    out << "\n";
  }
  return out.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace

void write_report(const std::filesystem::path& dir, const std::string& variant,
                  const std::vector<SeedResult>& results) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create output directory: " + ec.message());

  std::vector<double> faas;
  std::vector<double> ffs;
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& r : results) {
    const std::string tag = std::to_string(r.seed);
    write_text(dir / ("accuracy_seed" + tag + ".csv"), accuracy_csv(r.accuracy));
    write_text(dir / ("confusion_seed" + tag + ".csv"), matrix_csv(r.final_confusion.matrix, "query_task"));
    std::string precision = "after_task,first_task_precision\n";
    for (std::size_t t = 0; t < r.first_task_precision.size(); ++t) {
      precision += std::to_string(t) + "," + format_fixed(r.first_task_precision[t]) + "\n";
    }
    write_text(dir / ("precision_seed" + tag + ".csv"), precision);

    faas.push_back(r.faa);
    nlohmann::json entry{{"seed", r.seed}, {"faa", r.faa}};
    if (r.final_forgetting) {
      ffs.push_back(*r.final_forgetting);
      entry["final_forgetting"] = *r.final_forgetting;
    } else {
      entry["final_forgetting"] = nullptr;
    }
    seeds.push_back(entry);
  }
  const Summary faa_s = summarize(faas);
  nlohmann::json summary{{"variant", variant},
                         {"seeds", seeds},
                         {"faa", {{"mean", faa_s.mean}, {"std", faa_s.std}}}};
  if (!ffs.empty()) {
    const Summary ff_s = summarize(ffs);
    summary["final_forgetting"] = {{"mean", ff_s.mean}, {"std", ff_s.std}};
  } else {
    summary["final_forgetting"] = nullptr;
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace starprompt
