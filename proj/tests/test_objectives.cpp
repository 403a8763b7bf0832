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
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "starprompt/errors.hpp"
#include "starprompt/objectives.hpp"

using namespace starprompt;

namespace {

const double kLogistic = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));  // 0.3133

EncoderConfig small_config() {
  EncoderConfig c;
  c.d = 4;
  c.d_prime = 6;
  c.layers = 2;
  c.heads = 2;
  c.seq_len = 3;
  c.patch_dim = 2;
  c.mlp_ratio = 2;
  return c;
}

Mog point_mass(std::vector<double> at) {
  Mog m;
  m.weights = {1.0};
  m.covariances = {std::vector<double>(at.size(), 1e-6)};
  m.means = {std::move(at)};
  return m;
}

void set_row(Tensor& t, std::size_t r, std::vector<double> v) {
  auto d = t.mutable_data();
  for (std::size_t j = 0; j < v.size(); ++j) d[r * t.cols() + j] = v[j];
}

}  // namespace

TEST_CASE("cross-entropy at uniform logits is ln N") {
  for (std::size_t n : {2u, 3u, 5u, 10u}) {
    const Tensor logits = Tensor::zeros(4, n);
    const std::vector<std::size_t> targets{0, 1, n - 1, 0};
    CHECK(cross_entropy(logits, targets).item() == doctest::Approx(std::log(double(n))).epsilon(1e-12));
  }
  CHECK_THROWS_AS((void)cross_entropy(Tensor::zeros(2, 3), std::vector<std::size_t>{0}), ShapeError);
}

TEST_CASE("stage-one cross-entropy hand cases") {
  const Tensor keys = Tensor::from_data(2, 3, {1, 0, 0, 0, 1, 0});
  const std::vector<int> kc{10, 20};
  const std::vector<int> label{10};
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(ce_stage1(keys, kc, Tensor::row({r, r, 0}), label, 0.3).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(ce_stage1(keys, kc, Tensor::row({1, 0, 0}), label, 1.0).item() ==
        doctest::Approx(kLogistic).epsilon(1e-9));
  CHECK(ce_stage1(keys, kc, Tensor::row({0.8, 0.6, 0}), label, 1e-3).item() < 1e-6);
  CHECK_THROWS_AS((void)ce_stage1(keys, kc, Tensor::row({1, 0, 0}), std::vector<int>{30}, 1.0), LabelError);
}

TEST_CASE("stage-two cross-entropy on fresh and hand-set heads") {
  ClassifierHeads heads(3);
  heads.add_task(0, {0, 1, 2, 3, 4});
  const Tensor f = Tensor::from_data(2, 3, {1, 2, 3, -1, 0, 2});
  const std::vector<int> labels{3, 0};
  CHECK(ce_stage2(heads, f, labels, 0).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  Tensor w = heads.weight(0);
  set_row(w, 0, {0, 0, 0, 20, 0});
  const std::vector<int> three{3};
  CHECK(ce_stage2(heads, Tensor::row({1, 0, 0}), three, 0).item() < 0.01);
  CHECK_THROWS_AS((void)ce_stage2(heads, f, std::vector<int>{7, 0}, 0), LabelError);
}

TEST_CASE("heads concatenate in task order and freeze") {
  ClassifierHeads heads(2);
  heads.add_task(0, {4, 5});
  heads.add_task(1, {0, 1});
  heads.add_task(2, {2, 3});
  CHECK(heads.all_logits(Tensor::row({1, 2})).cols() == 6);
  CHECK(heads.all_classes() == std::vector<int>{4, 5, 0, 1, 2, 3});
  CHECK_THROWS_AS(heads.add_task(4, {9}), StateError);
  const auto h0 = heads.hash(0);
  heads.freeze_all();
  CHECK_FALSE(heads.weight(1).requires_grad());
  CHECK(heads.hash(0) == h0);
  heads.set_trainable(2, true);
  CHECK(heads.parameters(2)[0].requires_grad());
  CHECK(heads.parameters_through(1).size() == 4);

  Tensor w = heads.weight(1);
  set_row(w, 1, {0.5, -0.25});
  const auto path = std::filesystem::temp_directory_path() / "starprompt_heads.bin";
  heads.save(path);
  const ClassifierHeads back = ClassifierHeads::load(path);
  for (int t = 0; t < 3; ++t) {
    CHECK(back.hash(t) == heads.hash(t));
    CHECK(back.classes(t) == heads.classes(t));
  }
}

TEST_CASE("first-level orthogonality hand cases") {
  const EncoderConfig cfg = small_config();
  PromptCodebooks books(cfg);
  Rng rng(1);
  const std::vector<int> past{0};
  const std::vector<int> cur{1};
  books.extend(past, 0, rng);
  books.extend(cur, 1, rng);
  CHECK(ortho_first(books, cur, {}).item() == 0.0);
  CHECK(ortho_first(books, {}, past).item() == 0.0);

  Tensor p0 = books.at(0).prompt;
  Tensor p1 = books.at(1).prompt;
  set_row(p0, 0, {1, 0, 0, 0});
  set_row(p1, 0, {0.6, 0.8, 0, 0});
  CHECK(ortho_first(books, cur, past).item() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(ortho_first(books, cur, past, OrthoMode::raw).item() == doctest::Approx(0.6).epsilon(1e-12));
  set_row(p1, 0, {0, 0.3, -2, 0});
  CHECK(std::fabs(ortho_first(books, cur, past).item()) < 1e-6);
}

TEST_CASE("second-level orthogonality averages over layers") {
  const EncoderConfig cfg = small_config();
  PromptCodebooks books(cfg);
  Rng rng(2);
  const std::vector<int> past{0};
  const std::vector<int> cur{1};
  books.extend(past, 0, rng);
  books.extend(cur, 1, rng);
  CHECK(ortho_second(books, cur, past).item() == 0.0);
  CHECK(ortho_second(books, cur, {}).item() == 0.0);
  Tensor q0 = books.at(0).second;
  Tensor q1 = books.at(1).second;
  set_row(q0, 0, {1, 0, 0, 0, 0, 0});
  set_row(q0, 1, {1, 0, 0, 0, 0, 0});
  set_row(q1, 0, {0.6, 0.8, 0, 0, 0, 0});
  set_row(q1, 1, {0.2, std::sqrt(0.96), 0, 0, 0, 0});
  CHECK(ortho_second(books, cur, past).item() == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("first-level replay loss") {
  Rng rng(3);
  MogBank one{{5, point_mass({1, 0, 0})}};
  const std::vector<int> c1{5};
  CHECK(std::fabs(gr_loss_first(Tensor::row({1, 0, 0}), c1, one, 64, 1.0, rng).item()) < 1e-6);

  MogBank two{{0, point_mass({1, 0, 0})}, {1, point_mass({0, 1, 0})}};
  const std::vector<int> c2{0, 1};
  const Tensor keys = Tensor::from_data(2, 3, {1, 0, 0, 0, 1, 0});
  CHECK(gr_loss_first(keys, c2, two, 256, 1.0, rng).item() == doctest::Approx(kLogistic).epsilon(1e-4));
  MogBank missing{{0, point_mass({1, 0, 0})}};
  CHECK_THROWS_AS((void)gr_loss_first(keys, c2, missing, 4, 1.0, rng), StateError);
}

TEST_CASE("second-level replay loss") {
  Rng rng(4);
  ClassifierHeads heads(2);
  heads.add_task(0, {0, 1, 2});
  MogBank bank{{0, point_mass({1, 0})}, {1, point_mass({0, 1})}, {2, point_mass({-1, -1})}};
  CHECK(gr_loss_second(heads, bank, 30, rng).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Tensor w = heads.weight(0);
  set_row(w, 0, {10, 0, -10});
  set_row(w, 1, {0, 10, -10});
  // Logit margin of at least 10 for every class at its own mean.
  CHECK(gr_loss_second(heads, bank, 30, rng).item() < 1e-3);

  const ReplaySet set = draw_replay(bank, std::vector<int>{0, 2}, 5, rng);
  CHECK(set.features.rows() == 10);
  CHECK(set.labels == std::vector<int>{0, 0, 0, 0, 0, 2, 2, 2, 2, 2});
  const std::vector<std::size_t> order{9, 0, 5, 1, 2, 3, 4, 6, 7, 8};
  const ReplaySet part = replay_batch(set, order, 0, 3);
  CHECK(part.labels == std::vector<int>{2, 0, 2});
}
