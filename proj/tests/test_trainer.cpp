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
#include <filesystem>
#include <map>
#include <memory>
#include <vector>

#include "doctest.h"
#include "starprompt/errors.hpp"
#include "starprompt/scenario.hpp"
#include "starprompt/trainer.hpp"

using namespace starprompt;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.d = 8;
  c.d_prime = 16;
  c.layers = 2;
  c.heads = 2;
  c.seq_len = 5;
  c.patch_dim = 4;
  c.mlp_ratio = 2;
  return c;
}

Hyperparams quick() {
  Hyperparams hp;
  hp.epochs_main = 3;
  hp.epochs_replay = 1;
  hp.n_replay = 16;
  hp.components = 2;
  hp.batch_size = 8;
  return hp;
}

TaskStream small_stream(std::size_t tasks, std::size_t per_task) {
  ScenarioSpec spec;
  spec.num_tasks = tasks;
  spec.classes_per_task = per_task;
  spec.train_per_class = 12;
  spec.test_per_class = 6;
  return generate_scenario(spec, small_config().input_dim());
}

constexpr std::uint64_t kStackSeed = 31;

std::shared_ptr<const FrozenStack> small_stack() {
  static const auto stack = std::make_shared<const FrozenStack>(build_stack(small_config(), kStackSeed));
  return stack;
}

}  // namespace

TEST_CASE("a single separable task is learned by the second-level head") {
  const TaskStream stream = small_stream(1, 4);
  Hyperparams hp = quick();
  hp.epochs_main = 10;
  Trainer trainer(small_stack(), hp, VariantFlags{}, 1993);
  const StageLog& log = trainer.train_task(stream.tasks[0], stream.class_names);
  CHECK(log.stage2_train_accuracy >= 0.95);
  CHECK(log.stage1_main.size() == hp.epochs_main);
  CHECK(log.stage1_replay.size() == hp.epochs_replay);
  CHECK(log.stage2_main.size() == hp.epochs_main);
  CHECK(log.stage2_replay.size() == hp.epochs_replay);
  CHECK(log.stage1_main.back() < log.stage1_main.front());
}

TEST_CASE("later tasks leave earlier prompts, mixtures and the frozen stack untouched") {
  const TaskStream stream = small_stream(3, 2);
  const auto stack = small_stack();
  const auto stack_hash = stack->hash();
  Trainer trainer(stack, quick(), VariantFlags{}, 1996);
  std::map<int, std::uint64_t> prompt_hashes;
  std::map<int, std::vector<double>> means;
  for (const TaskData& task : stream.tasks) {
    trainer.train_task(task, stream.class_names);
    for (const auto& [c, h] : prompt_hashes) CHECK(trainer.codebooks().at(c).hash() == h);
    for (const auto& [c, m] : means) CHECK(trainer.first_bank().at(c).means[0] == m);
    for (int c : task.classes) {
      prompt_hashes[c] = trainer.codebooks().at(c).hash();
      means[c] = trainer.first_bank().at(c).means[0];
    }
    CHECK(trainer.codebooks().trainable_classes().empty());
    CHECK(trainer.keys().matrix.to_vector() == trainer.recompute_keys().matrix.to_vector());
    CHECK(trainer.keys().valid_through_task == task.index);
  }
  CHECK(stack->hash() == stack_hash);
  CHECK(trainer.predict(slice_rows(stream.tasks[0].test_x, 0, 1)).logits.size() == 6);
}

TEST_CASE("past heads move only through replay") {
  const TaskStream stream = small_stream(3, 2);
  Trainer plain(small_stack(), quick(), VariantFlags::from_name("no_replay"), 7);
  Trainer full(small_stack(), quick(), VariantFlags{}, 7);
  std::vector<std::uint64_t> plain_hashes;
  std::vector<std::uint64_t> full_hashes;
  for (const TaskData& task : stream.tasks) {
    plain.train_task(task, stream.class_names);
    full.train_task(task, stream.class_names);
    for (std::size_t t = 0; t < plain_hashes.size(); ++t) {
      CHECK(plain.heads().hash(static_cast<int>(t)) == plain_hashes[t]);
      CHECK(full.heads().hash(static_cast<int>(t)) != full_hashes[t]);
    }
    plain_hashes.push_back(plain.heads().hash(task.index));
    full_hashes.push_back(full.heads().hash(task.index));
    CHECK_FALSE(full.heads().weight(task.index).requires_grad());
  }
}

TEST_CASE("training order and inputs are validated") {
  const TaskStream stream = small_stream(2, 2);
  Trainer trainer(small_stack(), quick(), VariantFlags{}, 1);
  CHECK_THROWS_AS((void)trainer.predict(Tensor::zeros(1, small_config().input_dim())), StateError);
  CHECK_THROWS_AS(trainer.train_task(stream.tasks[1], stream.class_names), StateError);
  TaskData bad = stream.tasks[0];
  bad.train_y.pop_back();
  CHECK_THROWS_AS(trainer.train_task(bad, stream.class_names), ShapeError);
  CHECK_THROWS_AS(Trainer(nullptr, quick(), VariantFlags{}, 1), ConfigError);
  VariantFlags two;
  two.no_replay = true;
  two.unimodal = true;
  CHECK_THROWS_AS(Trainer(small_stack(), quick(), two, 1), ConfigError);
}

TEST_CASE("unimodal variant fits single-component mixtures") {
  const TaskStream stream = small_stream(1, 2);
  Trainer trainer(small_stack(), quick(), VariantFlags::from_name("unimodal"), 2);
  trainer.train_task(stream.tasks[0], stream.class_names);
  for (const auto& [c, m] : trainer.first_bank()) CHECK(m.components() == 1);
  for (const auto& [c, m] : trainer.second_bank()) CHECK(m.components() == 1);
}

TEST_CASE("first-level-only variant classifies by retrieval") {
  const TaskStream stream = small_stream(2, 2);
  Trainer trainer(small_stack(), quick(), VariantFlags::from_name("first_level_only"), 3);
  for (const TaskData& t : stream.tasks) trainer.train_task(t, stream.class_names);
  CHECK(trainer.heads().tasks() == 0);
  for (const Prediction& p : trainer.predict_all(stream.tasks[1].test_x)) CHECK(p.class_id == p.selected_class);
}

TEST_CASE("no-first-level variant keeps prompts at initialization") {
  const TaskStream stream = small_stream(1, 2);
  Trainer trainer(small_stack(), quick(), VariantFlags::from_name("no_first_level"), 4);
  trainer.train_task(stream.tasks[0], stream.class_names);
  CHECK(trainer.logs()[0].stage1_main.empty());
  const PrototypeKeys fixed = compute_static_keys(stream.tasks[0].classes, trainer.stack(),
                                                  trainer.class_embeddings(), hand_crafted_context(small_config()));
  CHECK(trainer.keys().matrix.to_vector() == fixed.matrix.to_vector());
}

TEST_CASE("prefix and no-replay variants train end to end") {
  const TaskStream stream = small_stream(2, 2);
  for (const char* name : {"prefix_tuning", "no_replay", "no_conf_mod"}) {
    Trainer trainer(small_stack(), quick(), VariantFlags::from_name(name), 5);
    for (const TaskData& t : stream.tasks) trainer.train_task(t, stream.class_names);
    CHECK(trainer.predict(slice_rows(stream.tasks[0].test_x, 0, 1)).logits.size() == 4);
    if (std::string(name) == "no_replay") CHECK(trainer.logs()[1].stage2_replay.empty());
  }
}

TEST_CASE("checkpoint round trip reproduces predictions") {
  const TaskStream stream = small_stream(2, 2);
  Trainer trainer(std::make_shared<const FrozenStack>(build_stack(small_config(), kStackSeed)), quick(),
                  VariantFlags{}, 6);
  for (const TaskData& t : stream.tasks) trainer.train_task(t, stream.class_names);
  const auto dir = std::filesystem::temp_directory_path() / "starprompt_ckpt_test";
  std::filesystem::remove_all(dir);
  trainer.save(dir, kStackSeed);
  const Trainer back = Trainer::load(dir);
  CHECK(back.tasks_trained() == 2);
  for (const TaskData& t : stream.tasks) {
    const auto a = trainer.predict_all(t.test_x);
    const auto b = back.predict_all(t.test_x);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].class_id == b[i].class_id);
      CHECK(a[i].logits == b[i].logits);
    }
  }
  CHECK_THROWS_AS((void)Trainer::load(dir / "missing"), IoError);
}

TEST_CASE("same seed trains identically") {
  const TaskStream stream = small_stream(2, 2);
  auto train = [&](std::uint64_t seed) {
    Trainer t(small_stack(), quick(), VariantFlags{}, seed);
    for (const TaskData& task : stream.tasks) t.train_task(task, stream.class_names);
    return t.heads().hash(1) ^ t.codebooks().at(stream.tasks[1].classes[0]).hash();
  };
  CHECK(train(8) == train(8));
  CHECK(train(8) != train(9));
}
