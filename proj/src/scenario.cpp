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
#include "starprompt/scenario.hpp"

#include <algorithm>
#include <cmath>

#include "starprompt/errors.hpp"
#include "starprompt/feature_file.hpp"
#include "starprompt/rng.hpp"

namespace starprompt {

void ScenarioSpec::validate() const {
  if (num_tasks == 0) throw ConfigError("scenario: tasks must be at least 1");
  if (classes_per_task == 0) throw ConfigError("scenario: classes_per_task must be at least 1");
  if (train_per_class == 0 || test_per_class == 0) throw ConfigError("scenario: per-class sample counts must be positive");
  if (separation < 0.0 || noise < 0.0 || mode_separation < 0.0) throw ConfigError("scenario: scales must be non-negative");
  if (kind == ScenarioKind::feature_file && path.empty()) throw ConfigError("scenario: feature_file needs a path");
}

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::separable: return "separable";
    case ScenarioKind::bimodal: return "bimodal";
    case ScenarioKind::feature_file: return "feature_file";
  }
  return "separable";
}

ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "separable") return ScenarioKind::separable;
  if (s == "bimodal") return ScenarioKind::bimodal;
  if (s == "feature_file") return ScenarioKind::feature_file;
  throw ConfigError("unknown scenario kind '" + s + "'");
}

namespace {

std::vector<double> gaussian(Rng& rng, std::size_t dim, double scale) {
  std::vector<double> v(dim);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

ClassPool synthetic_pool(const ScenarioSpec& spec, std::size_t dim) {
  ClassPool pool;
  pool.dim = dim;
  const std::size_t total = spec.num_tasks * spec.classes_per_task;
  const Rng root(spec.seed);
  for (std::size_t k = 0; k < total; ++k) {
    const int c = static_cast<int>(k);
    Rng rng = root.fork(k + 1);
    const std::vector<double> center = gaussian(rng, dim, spec.separation);
    std::vector<std::vector<double>> modes{center};
    if (spec.kind == ScenarioKind::bimodal) {
      const std::vector<double> offset = gaussian(rng, dim, spec.mode_separation);
      modes.assign(2, center);
      for (std::size_t i = 0; i < dim; ++i) {
        modes[0][i] += 0.5 * offset[i];
        modes[1][i] -= 0.5 * offset[i];
      }
    }
    auto draw = [&](std::size_t count) {
      std::vector<std::vector<double>> rows;
      for (std::size_t s = 0; s < count; ++s) {
        std::vector<double> x = modes[s % modes.size()];
        for (double& v : x) v += spec.noise * rng.normal();
        rows.push_back(std::move(x));
      }
      return rows;
    };
    pool.classes.push_back(c);
    pool.names[c] = "class_" + std::to_string(c);
    pool.train[c] = draw(spec.train_per_class);
    pool.test[c] = draw(spec.test_per_class);
  }
  return pool;
}

ClassPool file_pool(const ScenarioSpec& spec, std::size_t dim) {
  const FeatureSet set = load_feature_file(spec.path);
  if (set.features.cols() != dim) {
    throw ShapeError(spec.path.string() + ": feature width " + std::to_string(set.features.cols()) +
                     " does not match the encoder input width " + std::to_string(dim));
  }
  std::map<int, std::vector<std::vector<double>>> rows;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    const auto r = set.features.row_span(i);
    rows[static_cast<int>(set.labels[i])].emplace_back(r.begin(), r.end());
  }
  const std::size_t needed = spec.num_tasks * spec.classes_per_task;
  if (rows.size() < needed) {
    throw ConfigError(spec.path.string() + ": has " + std::to_string(rows.size()) + " classes, scenario needs " +
                      std::to_string(needed));
  }
  ClassPool pool;
  pool.dim = dim;
  for (auto& [c, samples] : rows) {
    if (pool.classes.size() == needed) break;
    if (samples.size() < 2) throw ConfigError(spec.path.string() + ": class " + std::to_string(c) + " has fewer than 2 rows");
    const std::size_t n_train = std::min(spec.train_per_class, samples.size() - 1);
    const std::size_t n_test = std::min(spec.test_per_class, samples.size() - n_train);
    pool.classes.push_back(c);
    pool.names[c] = "class_" + std::to_string(c);
    pool.train[c].assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n_train));
    pool.test[c].assign(samples.begin() + static_cast<std::ptrdiff_t>(n_train),
                        samples.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  }
  return pool;
}

Tensor stack_rows(const std::vector<const std::vector<double>*>& rows, std::size_t dim) {
  std::vector<double> v;
  v.reserve(rows.size() * dim);
  for (const auto* r : rows) v.insert(v.end(), r->begin(), r->end());
  return Tensor::from_data(rows.size(), dim, std::move(v));
}

}  // namespace

ClassPool generate_pool(const ScenarioSpec& spec, std::size_t input_dim) {
  spec.validate();
  return spec.kind == ScenarioKind::feature_file ? file_pool(spec, input_dim) : synthetic_pool(spec, input_dim);
}

TaskStream build_stream(const ClassPool& pool, const std::vector<int>& class_order, std::size_t classes_per_task) {
  if (classes_per_task == 0 || class_order.empty() || class_order.size() % classes_per_task != 0) {
    throw ConfigError("build_stream: class count is not a multiple of classes_per_task");
  }
  TaskStream stream;
  stream.class_names = pool.names;
  for (std::size_t t = 0; t * classes_per_task < class_order.size(); ++t) {
    TaskData task;
    task.index = static_cast<int>(t);
    task.classes.assign(class_order.begin() + static_cast<std::ptrdiff_t>(t * classes_per_task),
                        class_order.begin() + static_cast<std::ptrdiff_t>((t + 1) * classes_per_task));
    std::vector<const std::vector<double>*> train_rows;
    std::vector<const std::vector<double>*> test_rows;
    // Interleave classes so that rows are not grouped by label.
    std::size_t longest = 0;
    for (int c : task.classes) longest = std::max({longest, pool.train.at(c).size(), pool.test.at(c).size()});
    for (std::size_t s = 0; s < longest; ++s) {
      for (int c : task.classes) {
        if (s < pool.train.at(c).size()) {
          train_rows.push_back(&pool.train.at(c)[s]);
          task.train_y.push_back(c);
        }
        if (s < pool.test.at(c).size()) {
          test_rows.push_back(&pool.test.at(c)[s]);
          task.test_y.push_back(c);
        }
      }
    }
    task.train_x = stack_rows(train_rows, pool.dim);
    task.test_x = stack_rows(test_rows, pool.dim);
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

std::vector<int> class_order_for_seed(const ClassPool& pool, std::uint64_t seed) {
  std::vector<int> order = pool.classes;
  if (seed != 0) {
    Rng rng = Rng(seed).fork(0x0c1a55);
    rng.shuffle(std::span<int>(order));
  }
  return order;
}

TaskStream generate_scenario(const ScenarioSpec& spec, std::size_t input_dim) {
  const ClassPool pool = generate_pool(spec, input_dim);
  return build_stream(pool, pool.classes, spec.classes_per_task);
}

}  // namespace starprompt
