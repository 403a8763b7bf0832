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
#include "starprompt/objectives.hpp"

#include <algorithm>
#include <string>
#include <unordered_map>

#include "starprompt/binary_io.hpp"
#include "starprompt/errors.hpp"

namespace starprompt {

// ---------------------------------------------------------------- heads

void ClassifierHeads::add_task(int task, std::vector<int> classes) {
  if (task != static_cast<int>(heads_.size())) {
    throw StateError("ClassifierHeads: expected task " + std::to_string(heads_.size()) + ", got " +
                     std::to_string(task));
  }
  if (classes.empty()) throw ConfigError("ClassifierHeads: task " + std::to_string(task) + " has no classes");
  Head h;
  h.weight = Tensor::zeros(width_, classes.size());
  h.bias = Tensor::zeros(1, classes.size());
  h.weight.set_name("theta_w_" + std::to_string(task)).set_requires_grad(true);
  h.bias.set_name("theta_b_" + std::to_string(task)).set_requires_grad(true);
  h.classes = std::move(classes);
  heads_.push_back(std::move(h));
}

const ClassifierHeads::Head& ClassifierHeads::head(int task) const {
  if (task < 0 || task >= static_cast<int>(heads_.size())) {
    throw StateError("ClassifierHeads: unknown task " + std::to_string(task));
  }
  return heads_[static_cast<std::size_t>(task)];
}

void ClassifierHeads::set_trainable(int task, bool on) {
  const Head& h = head(task);
  Tensor w = h.weight;
  Tensor b = h.bias;
  w.set_requires_grad(on);
  b.set_requires_grad(on);
  if (!on) {
    w.zero_grad();
    b.zero_grad();
  }
}

void ClassifierHeads::freeze_all() {
  for (std::size_t t = 0; t < heads_.size(); ++t) set_trainable(static_cast<int>(t), false);
}

const std::vector<int>& ClassifierHeads::classes(int task) const { return head(task).classes; }

std::vector<int> ClassifierHeads::all_classes() const {
  std::vector<int> out;
  for (const Head& h : heads_) out.insert(out.end(), h.classes.begin(), h.classes.end());
  return out;
}

const Tensor& ClassifierHeads::weight(int task) const { return head(task).weight; }
const Tensor& ClassifierHeads::bias(int task) const { return head(task).bias; }

std::vector<Tensor> ClassifierHeads::parameters(int task) const {
  const Head& h = head(task);
  return {h.weight, h.bias};
}

std::vector<Tensor> ClassifierHeads::parameters_through(int task) const {
  std::vector<Tensor> out;
  for (int t = 0; t <= task; ++t) {
    auto p = parameters(t);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

Tensor ClassifierHeads::logits(int task, const Tensor& features) const {
  const Head& h = head(task);
  return add(matmul(features, h.weight), h.bias);
}

Tensor ClassifierHeads::all_logits(const Tensor& features) const {
  if (heads_.empty()) throw StateError("ClassifierHeads: no heads");
  std::vector<Tensor> parts;
  parts.reserve(heads_.size());
  for (std::size_t t = 0; t < heads_.size(); ++t) parts.push_back(logits(static_cast<int>(t), features));
  return parts.size() == 1 ? parts.front() : concat_cols(parts);
}

std::uint64_t ClassifierHeads::hash(int task) const {
  const Head& h = head(task);
  return hash_tensor(h.bias, hash_tensor(h.weight));
}

namespace {
constexpr char kHeadMagic[] = "STARHEAD";
constexpr std::uint32_t kHeadVersion = 1;
}  // namespace

void ClassifierHeads::save(const std::filesystem::path& path) const {
  BinaryWriter w;
  w.bytes(std::string_view(kHeadMagic, 8));
  w.u32(kHeadVersion);
  w.u32(static_cast<std::uint32_t>(width_));
  w.u32(static_cast<std::uint32_t>(heads_.size()));
  for (const Head& h : heads_) {
    w.u32(static_cast<std::uint32_t>(h.classes.size()));
    for (int c : h.classes) w.u32(static_cast<std::uint32_t>(c));
    w.u8(h.weight.requires_grad() ? 1 : 0);
    for (double v : h.weight.data()) w.f64(v);
    for (double v : h.bias.data()) w.f64(v);
  }
  w.save(path);
}

ClassifierHeads ClassifierHeads::load(const std::filesystem::path& path) {
  BinaryReader r = BinaryReader::open(path);
  r.expect_magic(std::string_view(kHeadMagic, 8));
  if (r.u32() != kHeadVersion) throw FormatError(path.string() + ": unsupported head file version");
  ClassifierHeads heads(r.u32());
  const std::uint32_t tasks = r.u32();
  for (std::uint32_t t = 0; t < tasks; ++t) {
    const std::uint32_t n = r.u32();
    std::vector<int> classes(n);
    for (int& c : classes) c = static_cast<int>(r.u32());
    const bool trainable = r.u8() != 0;
    std::vector<double> w(heads.width_ * n);
    for (double& v : w) v = r.f64();
    std::vector<double> b(n);
    for (double& v : b) v = r.f64();
    heads.add_task(static_cast<int>(t), std::move(classes));
    Head& h = heads.heads_.back();
    std::copy(w.begin(), w.end(), h.weight.mutable_data().begin());
    std::copy(b.begin(), b.end(), h.bias.mutable_data().begin());
    heads.set_trainable(static_cast<int>(t), trainable);
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after heads");
  return heads;
}

// ---------------------------------------------------------------- cross-entropies

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  const std::size_t b = logits.rows();
  const std::size_t n = logits.cols();
  if (targets.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     logits.shape().str());
  }
  std::vector<double> onehot(b * n, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] >= n) throw LabelError("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    onehot[i * n + targets[i]] = -1.0 / static_cast<double>(b);
  }
  return sum(mul(log_softmax(logits), Tensor::from_data(b, n, std::move(onehot))));
}

std::vector<std::size_t> label_positions(std::span<const int> labels, std::span<const int> class_order,
                                         const char* context) {
  std::unordered_map<int, std::size_t> pos;
  for (std::size_t i = 0; i < class_order.size(); ++i) pos.emplace(class_order[i], i);
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (int y : labels) {
    auto it = pos.find(y);
    if (it == pos.end()) {
      throw LabelError(std::string(context) + ": label " + std::to_string(y) + " is not in the denominator set");
    }
    out.push_back(it->second);
  }
  return out;
}

Tensor ce_stage1(const Tensor& keys, std::span<const int> key_classes, const Tensor& z, std::span<const int> labels,
                 double tau) {
  if (keys.rows() != key_classes.size()) throw ShapeError("ce_stage1: key rows and class list disagree");
  if (tau <= 0.0) throw ConfigError("ce_stage1: tau must be positive");
  const auto targets = label_positions(labels, key_classes, "ce_stage1");
  return cross_entropy(scale(matmul(z, transpose(keys)), 1.0 / tau), targets);
}

Tensor ce_stage2(const ClassifierHeads& heads, const Tensor& features, std::span<const int> labels, int task) {
  const auto targets = label_positions(labels, heads.classes(task), "ce_stage2");
  return cross_entropy(heads.logits(task, features), targets);
}

// ---------------------------------------------------------------- orthogonality

namespace {

Tensor pair_penalty(const Tensor& current, const Tensor& past, OrthoMode mode) {
  if (mode == OrthoMode::raw) return sum(matmul(current, transpose(past)));
  return sum(abs(matmul(l2_normalize(current), transpose(l2_normalize(past)))));
}

template <typename RowFn>
Tensor stack_rows(std::span<const int> classes, RowFn&& row) {
  std::vector<Tensor> rows;
  rows.reserve(classes.size());
  for (int c : classes) rows.push_back(row(c));
  return rows.size() == 1 ? rows.front() : concat_rows(rows);
}

}  // namespace

Tensor ortho_first(const PromptCodebooks& books, std::span<const int> current, std::span<const int> past,
                   OrthoMode mode) {
  if (current.empty() || past.empty()) return Tensor::scalar(0.0);
  const Tensor cur = stack_rows(current, [&](int c) { return books.at(c).prompt; });
  const Tensor old = stack_rows(past, [&](int c) { return books.at(c).prompt.detach(); });
  return pair_penalty(cur, old, mode);
}

Tensor ortho_second(const PromptCodebooks& books, std::span<const int> current, std::span<const int> past,
                    OrthoMode mode) {
  if (current.empty() || past.empty()) return Tensor::scalar(0.0);
  const std::size_t layers = books.layers();
  Tensor total;
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor cur = stack_rows(current, [&](int c) { return slice_rows(books.at(c).second, l, 1); });
    const Tensor old = stack_rows(past, [&](int c) { return slice_rows(books.at(c).second.detach(), l, 1); });
    const Tensor term = pair_penalty(cur, old, mode);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(layers));
}

// ---------------------------------------------------------------- replay

ReplaySet draw_replay(const MogBank& bank, std::span<const int> classes, std::size_t n, Rng& rng) {
  if (classes.empty()) throw StateError("draw_replay: no classes");
  if (n == 0) throw ConfigError("draw_replay: n must be positive");
  ReplaySet set;
  std::vector<Tensor> parts;
  for (int c : classes) {
    auto it = bank.find(c);
    if (it == bank.end()) throw StateError("draw_replay: no fitted mixture for class " + std::to_string(c));
    parts.push_back(sample(it->second, n, rng));
    set.labels.insert(set.labels.end(), n, c);
  }
  set.features = parts.size() == 1 ? parts.front() : concat_rows(parts);
  return set;
}

ReplaySet replay_batch(const ReplaySet& set, std::span<const std::size_t> order, std::size_t begin,
                       std::size_t count) {
  const std::size_t dim = set.features.cols();
  ReplaySet out;
  std::vector<double> values;
  values.reserve(count * dim);
  for (std::size_t k = begin; k < begin + count; ++k) {
    const std::size_t i = order[k];
    const auto row = set.features.row_span(i);
    values.insert(values.end(), row.begin(), row.end());
    out.labels.push_back(set.labels[i]);
  }
  out.features = Tensor::from_data(count, dim, std::move(values));
  return out;
}

Tensor gr_loss_first(const Tensor& keys, std::span<const int> key_classes, const ReplaySet& replay, double tau) {
  return ce_stage1(keys, key_classes, replay.features, replay.labels, tau);
}

Tensor gr_loss_first(const Tensor& keys, std::span<const int> key_classes, const MogBank& bank, std::size_t n,
                     double tau, Rng& rng) {
  return gr_loss_first(keys, key_classes, draw_replay(bank, key_classes, n, rng), tau);
}

Tensor gr_loss_second(const ClassifierHeads& heads, const ReplaySet& replay) {
  const auto order = heads.all_classes();
  const auto targets = label_positions(replay.labels, order, "gr_loss_second");
  return cross_entropy(heads.all_logits(replay.features), targets);
}

Tensor gr_loss_second(const ClassifierHeads& heads, const MogBank& bank, std::size_t n, Rng& rng) {
  const auto order = heads.all_classes();
  return gr_loss_second(heads, draw_replay(bank, order, n, rng));
}

}  // namespace starprompt
