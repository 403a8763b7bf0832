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
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "starprompt/errors.hpp"
#include "starprompt/metrics.hpp"
#include "starprompt/rng.hpp"

using namespace starprompt;

namespace {

AccuracyMatrix lower(const std::vector<std::vector<double>>& rows) {
  AccuracyMatrix a(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t j = 0; j <= t; ++j) a.set(t, j, rows[t][j]);
  return a;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("final average accuracy hand cases") {
  CHECK(faa(lower({{1}, {1, 1}, {1, 1, 1}})) == 1.0);
  CHECK(faa(lower({{0.9}, {0.8, 0.6}})) == 0.7);
  CHECK(faa(lower({{0.55}})) == 0.55);
}

TEST_CASE("final forgetting hand cases") {
  CHECK(final_forgetting(lower({{0.9}, {0.5, 0.8}})) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(final_forgetting(lower({{0.5}, {0.5, 0.7}, {0.5, 0.7, 0.9}})) == 0.0);
  // Columns that keep improving give negative forgetting (backward transfer).
  CHECK(final_forgetting(lower({{0.5}, {0.6, 0.7}, {0.8, 0.7, 0.9}})) == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK_THROWS_AS((void)final_forgetting(lower({{0.5}})), StateError);
  AccuracyMatrix partial(2);
  partial.set(1, 0, 0.5);
  partial.set(1, 1, 0.5);
  CHECK_THROWS_AS((void)final_forgetting(partial), StateError);
}

TEST_CASE("metrics agree with brute force over random prediction logs") {
  Rng rng(1993);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t tasks = 1 + rng.uniform_index(6);
    std::vector<PredictionRecord> records;
    std::vector<std::vector<double>> acc(tasks, std::vector<double>(tasks, 0.0));
    for (std::size_t t = 0; t < tasks; ++t) {
      for (std::size_t j = 0; j <= t; ++j) {
        const std::size_t n = 1 + rng.uniform_index(20);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const int label = static_cast<int>(rng.uniform_index(10));
          const bool right = rng.uniform() < 0.7;
          hits += right ? 1 : 0;
          records.push_back({static_cast<int>(t), static_cast<int>(j), label, right ? label : label + 1, -1});
        }
        acc[t][j] = static_cast<double>(hits) / static_cast<double>(n);
      }
    }
    const AccuracyMatrix a = accuracy_from_records(records, tasks);
    double want_faa = 0.0;
    for (std::size_t j = 0; j < tasks; ++j) want_faa += acc[tasks - 1][j];
    want_faa /= static_cast<double>(tasks);
    CHECK(std::fabs(faa(a) - want_faa) <= 1e-12);
    if (tasks >= 2) {
      double want_ff = 0.0;
      for (std::size_t j = 0; j + 1 < tasks; ++j) {
        double best = -1.0;
        for (std::size_t t = j; t + 1 < tasks; ++t) best = std::max(best, acc[t][j]);
        want_ff += best - acc[tasks - 1][j];
      }
      want_ff /= static_cast<double>(tasks - 1);
      CHECK(std::fabs(final_forgetting(a) - want_ff) <= 1e-12);
    }
  }
}

TEST_CASE("records outside the lower triangle are rejected") {
  std::vector<PredictionRecord> r{{0, 1, 0, 0, -1}};
  CHECK_THROWS_AS((void)accuracy_from_records(r, 2), StateError);
}

TEST_CASE("retrieval confusion from records") {
  const std::map<int, int> class_task{{0, 0}, {1, 0}, {2, 1}, {3, 1}};
  std::vector<PredictionRecord> r;
  r.push_back({0, 0, 0, 0, 0});
  r.push_back({0, 0, 1, 1, 1});
  SUBCASE("single task") {
    const RetrievalConfusion c = retrieval_confusion(r, class_task, 0);
    CHECK(c.matrix == std::vector<std::vector<double>>{{1.0}});
  }
  SUBCASE("two tasks") {
    r.push_back({1, 0, 0, 0, 0});
    r.push_back({1, 0, 1, 2, 2});
    r.push_back({1, 1, 2, 2, 2});
    r.push_back({1, 1, 3, 3, 3});
    r.push_back({1, 1, 3, 3, 3});
    r.push_back({1, 1, 2, 0, 1});
    const RetrievalConfusion c = retrieval_confusion(r, class_task, 1);
    CHECK(c.matrix[0] == std::vector<double>{0.5, 0.5});
    CHECK(c.matrix[1] == std::vector<double>{0.25, 0.75});
  }
}

TEST_CASE("summaries use the population deviation and vanish for identical seeds") {
  const Summary s = summarize({0.1, 0.1, 0.1});
  CHECK(s.mean == 0.1);
  CHECK(s.std == 0.0);
  const Summary t = summarize({1.0, 2.0, 3.0});
  CHECK(t.mean == doctest::Approx(2.0));
  CHECK(t.std == doctest::Approx(std::sqrt(2.0 / 3.0)));
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.uniform();
    CHECK(summarize({v, v, v}).std == 0.0);
  }
}

TEST_CASE("accuracy CSV round trip and formatting") {
  const AccuracyMatrix a = lower({{0.9}, {0.5, 0.8}, {0.25, 0.75, 1.0}});
  const std::string text = accuracy_csv(a);
  CHECK(text.rfind("after_task,task_0,task_1,task_2\n0,0.900000,,\n", 0) == 0);
  const AccuracyMatrix b = parse_accuracy_csv(text);
  CHECK(accuracy_csv(b) == text);
  CHECK(format_fixed(1.0 / 3.0) == "0.333333");
  CHECK_THROWS_AS((void)parse_accuracy_csv("after_task,task_0\n0,abc\n"), FormatError);
}

TEST_CASE("report writes per-seed CSVs and a JSON summary") {
  std::vector<SeedResult> results;
  for (std::uint64_t seed : {1993u, 1996u, 1997u}) {
    SeedResult r;
    r.seed = seed;
    r.accuracy = lower({{0.9}, {0.5, 0.8}});
    r.faa = faa(r.accuracy) + static_cast<double>(seed - 1993) * 0.01;
    r.final_forgetting = 0.4;
    r.final_confusion = {1, {{1.0, 0.0}, {0.0, 1.0}}};
    r.first_task_precision = {1.0, 1.0};
    results.push_back(r);
  }
  const auto dir = std::filesystem::temp_directory_path() / "starprompt_report_test";
  std::filesystem::remove_all(dir);
  write_report(dir, "full", results);
  for (const char* f : {"accuracy_seed1993.csv", "confusion_seed1996.csv", "precision_seed1997.csv"})
    CHECK(std::filesystem::exists(dir / f));
  const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(j["variant"] == "full");
  CHECK(j["faa"].contains("mean"));
  CHECK(j["faa"].contains("std"));
  CHECK(j["faa"]["std"].get<double>() > 0.0);
  CHECK(j["final_forgetting"]["std"].get<double>() == 0.0);
  CHECK(j["seeds"].size() == 3);
  CHECK(slurp(dir / "precision_seed1993.csv") == "after_task,first_task_precision\n0,1.000000\n1,1.000000\n");
}
