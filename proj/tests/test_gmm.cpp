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
#include <numbers>
#include <vector>

#include "doctest.h"
#include "starprompt/errors.hpp"
#include "starprompt/gmm.hpp"
#include "starprompt/rng.hpp"

using namespace starprompt;

namespace {

Tensor gaussian_cloud(Rng& rng, std::size_t n, std::size_t dim, const std::vector<double>& center, double sd) {
  std::vector<double> v(n * dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) v[i * dim + j] = center[j] + sd * rng.normal();
  return Tensor::from_data(n, dim, std::move(v));
}

// Direct density of a diagonal mixture, no log-sum-exp.
double brute_density(const Mog& m, std::span<const double> x) {
  double total = 0.0;
  for (std::size_t k = 0; k < m.components(); ++k) {
    double p = m.weights[k];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double var = m.covariances[k][j];
      const double d = x[j] - m.means[k][j];
      p *= std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
    }
    total += p;
  }
  return total;
}

}  // namespace

TEST_CASE("single component matches closed-form moments") {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 50 + 30 * static_cast<std::size_t>(trial);
    const std::size_t dim = 3 + static_cast<std::size_t>(trial);
    std::vector<double> center(dim);
    for (double& c : center) c = rng.normal(0, 4);
    const Tensor x = gaussian_cloud(rng, n, dim, center, 1.5);
    for (auto cov : {CovarianceType::diagonal, CovarianceType::full}) {
      const EmResult r = fit_em(x, EmConfig{.components = 1, .seed = 3, .covariance = cov});
      for (std::size_t j = 0; j < dim; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += x.at(i, j);
        mu /= static_cast<double>(n);
        CHECK(std::fabs(r.model.means[0][j] - mu) < 1e-6);
        for (std::size_t l = 0; l < dim; ++l) {
          if (cov == CovarianceType::diagonal && l != j) continue;
          double mu_l = 0.0;
          for (std::size_t i = 0; i < n; ++i) mu_l += x.at(i, l);
          mu_l /= static_cast<double>(n);
          double c = 0.0;
          for (std::size_t i = 0; i < n; ++i) c += (x.at(i, j) - mu) * (x.at(i, l) - mu_l);
          c /= static_cast<double>(n);
          // Full covariances carry a variance_floor ridge on the diagonal.
          if (cov == CovarianceType::full && l == j) c += 1e-6;
          const double got = cov == CovarianceType::diagonal ? r.model.covariances[0][j]
                                                             : r.model.covariances[0][j * dim + l];
          CHECK(std::fabs(got - c) < 1e-6);
        }
      }
      CHECK(r.model.weights[0] == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("two well-separated clusters are recovered") {
  Rng rng(2);
  const std::vector<double> ca{-10.0, 0.0, 5.0};
  const std::vector<double> cb{10.0, 3.0, -5.0};
  const Tensor a = gaussian_cloud(rng, 200, 3, ca, 0.5);
  const Tensor b = gaussian_cloud(rng, 200, 3, cb, 0.5);
  const Tensor parts[] = {a, b};
  const Tensor x = concat_rows(parts);
  const EmResult r = fit_em(x, EmConfig{.components = 2, .seed = 9});
  auto centroid = [](const Tensor& t, std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) s += t.at(i, j);
    return s / static_cast<double>(t.rows());
  };
  const std::size_t ia = r.model.means[0][0] < 0.0 ? 0 : 1;
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::fabs(r.model.means[ia][j] - centroid(a, j)) < 1e-3);
    CHECK(std::fabs(r.model.means[1 - ia][j] - centroid(b, j)) < 1e-3);
  }
  CHECK(r.model.weights[0] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("log-likelihood never decreases across EM iterations") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 20 + rng.uniform_index(481);
    const std::size_t dim = 1 + rng.uniform_index(32);
    const std::size_t clusters = 1 + rng.uniform_index(4);
    std::vector<Tensor> parts;
    for (std::size_t c = 0; c < clusters; ++c) {
      std::vector<double> center(dim);
      for (double& v : center) v = rng.normal(0, 3);
      parts.push_back(gaussian_cloud(rng, n / clusters + 1, dim, center, 0.5 + rng.uniform()));
    }
    const Tensor x = concat_rows(parts);
    const EmResult r =
        fit_em(x, EmConfig{.components = 1 + rng.uniform_index(5), .max_iters = 50, .tolerance = 1e-10,
                           .seed = static_cast<std::uint64_t>(trial)});
    for (std::size_t k = 1; k < r.log_likelihood.size(); ++k) {
      CHECK(r.log_likelihood[k] >= r.log_likelihood[k - 1] - 1e-9 * std::fabs(r.log_likelihood[k - 1]));
    }
    CHECK_NOTHROW(r.model.validate());
  }
}

TEST_CASE("log densities match a direct product of normal densities") {
  Rng rng(4);
  Mog m;
  m.weights = {0.2, 0.5, 0.3};
  for (int k = 0; k < 3; ++k) {
    m.means.push_back({rng.normal(), rng.normal()});
    m.covariances.push_back({0.5 + rng.uniform(), 0.5 + rng.uniform()});
  }
  const Tensor x = gaussian_cloud(rng, 20, 2, {0.0, 0.0}, 1.0);
  const auto ld = log_densities(m, x);
  double total = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const double direct = std::log(brute_density(m, x.row_span(i)));
    CHECK(ld[i] == doctest::Approx(direct).epsilon(1e-12));
    total += direct;
  }
  CHECK(log_likelihood(m, x) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("responsibilities are a distribution per sample") {
  Rng rng(5);
  const Tensor x = gaussian_cloud(rng, 60, 4, {0, 0, 0, 0}, 2.0);
  const EmResult r = fit_em(x, EmConfig{.components = 3, .seed = 1});
  const auto resp = responsibilities(r.model, x);
  const std::size_t m = r.model.components();
  REQUIRE(resp.size() == 60 * m);
  for (std::size_t i = 0; i < 60; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      CHECK(resp[i * m + k] >= 0.0);
      s += resp[i * m + k];
    }
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS((void)responsibilities(r.model, Tensor::zeros(2, 3)), ShapeError);
}

TEST_CASE("sampling follows the mixture weights and moments") {
  Mog m;
  m.weights = {0.25, 0.75};
  m.means = {{-5.0}, {5.0}};
  m.covariances = {{1.0}, {4.0}};
  Rng rng(6);
  const Tensor s = sample(m, 20000, rng);
  std::size_t left = 0;
  double right_sum = 0.0;
  double right_sq = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const double v = s.at(i, 0);
    if (v < 0.0) {
      ++left;
    } else {
      right_sum += v;
      right_sq += v * v;
    }
  }
  const double right = static_cast<double>(s.rows() - left);
  CHECK(static_cast<double>(left) / 20000.0 == doctest::Approx(0.25).epsilon(0.05));
  const double mu = right_sum / right;
  CHECK(mu == doctest::Approx(5.0).epsilon(0.02));
  CHECK(right_sq / right - mu * mu == doctest::Approx(4.0).epsilon(0.06));
  Rng again(6);
  CHECK(sample(m, 50, again).to_vector() == [] {
    Rng r(6);
    Mog mm;
    mm.weights = {0.25, 0.75};
    mm.means = {{-5.0}, {5.0}};
    mm.covariances = {{1.0}, {4.0}};
    return sample(mm, 50, r).to_vector();
  }());
}

TEST_CASE("fewer samples than components shrinks the mixture") {
  const Tensor x = Tensor::from_data(2, 2, {0, 0, 1, 1});
  const EmResult r = fit_em(x, EmConfig{.components = 5});
  CHECK(r.model.components() <= 2);
  CHECK_NOTHROW(r.model.validate());
}

TEST_CASE("degenerate and invalid inputs") {
  const Tensor same = Tensor::from_data(4, 2, {1, 1, 1, 1, 1, 1, 1, 1});
  const EmResult r = fit_em(same, EmConfig{.components = 2});
  CHECK_NOTHROW(r.model.validate());
  for (const auto& c : r.model.covariances)
    for (double v : c) CHECK(v >= 1e-6);
  CHECK_THROWS_AS((void)fit_em(same, EmConfig{.components = 0}), ConfigError);
  Mog bad;
  bad.weights = {0.5, 0.6};
  bad.means = {{0.0}, {1.0}};
  bad.covariances = {{1.0}, {1.0}};
  CHECK_THROWS_AS(bad.validate(), StateError);
}

TEST_CASE("mixture bank round trips exactly") {
  Rng rng(7);
  MogBank bank;
  for (int c : {3, 0, 11}) {
    const Tensor x = gaussian_cloud(rng, 40, 3, {double(c), 0, 1}, 1.0);
    bank[c] = fit_em(x, EmConfig{.components = 2, .seed = static_cast<std::uint64_t>(c),
                                 .covariance = c == 11 ? CovarianceType::full : CovarianceType::diagonal})
                  .model;
  }
  const auto p = std::filesystem::temp_directory_path() / "starprompt_mog_bank.bin";
  save_mog_bank(p, bank);
  const MogBank back = load_mog_bank(p);
  REQUIRE(back.size() == 3);
  for (const auto& [c, m] : bank) {
    CHECK(back.at(c).weights == m.weights);
    CHECK(back.at(c).means == m.means);
    CHECK(back.at(c).covariances == m.covariances);
    CHECK(back.at(c).type == m.type);
  }
}

TEST_CASE("standard normal log density at the mean") {
  for (std::size_t k : {1u, 3u, 8u}) {
    Mog m;
    m.weights = {1.0};
    m.means = {std::vector<double>(k, 0.5)};
    m.covariances = {std::vector<double>(k, 1.0)};
    const Tensor x = Tensor::from_data(1, k, std::vector<double>(k, 0.5));
    CHECK(log_densities(m, x)[0] == doctest::Approx(-0.5 * static_cast<double>(k) * std::log(2 * std::numbers::pi)));
  }
}

TEST_CASE("point masses, zero weights and the sample mean") {
  Rng rng(8);
  Mog point;
  point.weights = {1.0};
  point.means = {{2.0, -1.0}};
  point.covariances = {{1e-6, 1e-6}};
  const Tensor p = sample(point, 200, rng);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    CHECK(std::fabs(p.at(i, 0) - 2.0) < 0.01);
    CHECK(std::fabs(p.at(i, 1) + 1.0) < 0.01);
  }
  Mog two;
  two.weights = {1.0, 0.0};
  two.means = {{0.0}, {100.0}};
  two.covariances = {{1.0}, {1.0}};
  const Tensor t = sample(two, 2000, rng);
  for (std::size_t i = 0; i < t.rows(); ++i) CHECK(t.at(i, 0) < 50.0);
  Mog unit;
  unit.weights = {1.0};
  unit.means = {{1.0, -3.0, 0.5}};
  unit.covariances = {{1.0, 1.0, 1.0}};
  const Tensor u = sample(unit, 10000, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.rows(); ++i) s += u.at(i, j);
    CHECK(std::fabs(s / 10000.0 - unit.means[0][j]) < 0.05);
  }
}
