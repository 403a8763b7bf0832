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
#include "starprompt/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "starprompt/binary_io.hpp"
#include "starprompt/errors.hpp"

namespace starprompt {

std::uint64_t ClassPrompts::hash() const {
  std::uint64_t h = hash_tensor(prompt);
  h = hash_tensor(second, h);
  return hash_tensor(query_weights, h);
}

PromptCodebooks::PromptCodebooks(const EncoderConfig& config, ConditioningMode mode, std::size_t prefix_tokens)
    : config_(config), mode_(mode), prefix_tokens_(prefix_tokens), layers_(config.layers) {
  if (mode_ == ConditioningMode::prefix && prefix_tokens_ == 0) {
    throw ConfigError("PromptCodebooks: prefix mode needs at least one token");
  }
}

std::size_t PromptCodebooks::second_width() const {
  return mode_ == ConditioningMode::residual ? config_.d_prime : 2 * prefix_tokens_ * config_.d_prime;
}

void PromptCodebooks::extend(std::span<const int> new_classes, int task, Rng& rng) {
  for (std::size_t i = 0; i < new_classes.size(); ++i) {
    const int c = new_classes[i];
    if (contains(c) || std::count(new_classes.begin(), new_classes.end(), c) > 1) {
      throw ConfigError("extend_codebooks: duplicate class id " + std::to_string(c));
    }
  }
  freeze_all();
  for (int c : new_classes) {
    ClassPrompts e;
    e.class_id = c;
    e.task = task;
    std::vector<double> p(config_.d);
    for (double& v : p) v = rng.normal(0.0, 0.02);
    e.prompt = Tensor::row(std::move(p));
    e.second = Tensor::zeros(layers_, second_width());
    e.query_weights = Tensor::full(1, config_.d, 1.0);
    const std::string tag = std::to_string(c);
    e.prompt.set_name("p_" + tag).set_requires_grad(true);
    e.second.set_name("Q_" + tag).set_requires_grad(true);
    e.query_weights.set_name("A_" + tag).set_requires_grad(true);
    e.trainable = true;
    insert(std::move(e));
  }
}

void PromptCodebooks::freeze_all() {
  for (auto& [id, e] : entries_) {
    e.trainable = false;
    e.prompt.set_requires_grad(false);
    e.second.set_requires_grad(false);
    e.query_weights.set_requires_grad(false);
    e.prompt.zero_grad();
    e.second.zero_grad();
    e.query_weights.zero_grad();
  }
}

void PromptCodebooks::insert(ClassPrompts entry) {
  const int c = entry.class_id;
  if (contains(c)) throw ConfigError("PromptCodebooks: duplicate class id " + std::to_string(c));
  if (entry.prompt.cols() != config_.d || entry.query_weights.cols() != config_.d ||
      entry.second.rows() != layers_ || entry.second.cols() != second_width()) {
    throw ShapeError("PromptCodebooks: entry for class " + std::to_string(c) + " has the wrong shapes");
  }
  entries_.emplace(c, std::move(entry));
  order_.push_back(c);
}

const ClassPrompts& PromptCodebooks::at(int class_id) const {
  auto it = entries_.find(class_id);
  if (it == entries_.end()) throw StateError("PromptCodebooks: unknown class " + std::to_string(class_id));
  return it->second;
}

ClassPrompts& PromptCodebooks::at(int class_id) {
  auto it = entries_.find(class_id);
  if (it == entries_.end()) throw StateError("PromptCodebooks: unknown class " + std::to_string(class_id));
  return it->second;
}

std::vector<int> PromptCodebooks::trainable_classes() const {
  std::vector<int> out;
  for (int c : order_) {
    if (entries_.at(c).trainable) out.push_back(c);
  }
  return out;
}

std::vector<int> PromptCodebooks::classes_before(int task) const {
  std::vector<int> out;
  for (int c : order_) {
    if (entries_.at(c).task < task) out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------- keys

std::size_t PrototypeKeys::row_of(int class_id) const {
  auto it = std::find(classes.begin(), classes.end(), class_id);
  if (it == classes.end()) throw StateError("PrototypeKeys: no key for class " + std::to_string(class_id));
  return static_cast<std::size_t>(it - classes.begin());
}

Tensor PrototypeKeys::key(int class_id) const { return slice_rows(matrix, row_of(class_id), 1); }

namespace {
const ClassNameEmbedding& name_of(const ClassEmbeddings& names, int class_id) {
  auto it = names.find(class_id);
  if (it == names.end()) throw StateError("compute_keys: missing name embedding for class " + std::to_string(class_id));
  return it->second;
}
}  // namespace

Tensor live_key(const PromptCodebooks& books, const FrozenStack& stack, const ClassEmbeddings& names, int class_id) {
  return text_encode(stack, books.at(class_id).prompt, name_of(names, class_id));
}

PrototypeKeys compute_keys(const PromptCodebooks& books, const FrozenStack& stack, const ClassEmbeddings& names) {
  PrototypeKeys keys;
  std::vector<Tensor> rows;
  for (int c : books.classes()) {
    rows.push_back(text_encode(stack, books.at(c).prompt.detach(), name_of(names, c)));
    keys.classes.push_back(c);
  }
  if (rows.empty()) throw StateError("compute_keys: codebook is empty");
  keys.matrix = concat_rows(rows);
  return keys;
}

PrototypeKeys compute_static_keys(std::span<const int> classes, const FrozenStack& stack,
                                  const ClassEmbeddings& names, const Tensor& context_token) {
  PrototypeKeys keys;
  std::vector<Tensor> rows;
  const Tensor context = context_token.detach();
  for (int c : classes) {
    rows.push_back(text_encode(stack, context, name_of(names, c)));
    keys.classes.push_back(c);
  }
  if (rows.empty()) throw StateError("compute_static_keys: no classes");
  keys.matrix = concat_rows(rows);
  return keys;
}

Tensor hand_crafted_context(const EncoderConfig& config) {
  return class_name_embed("a photo of a", config).vector;
}

// ---------------------------------------------------------------- selection

Tensor query_similarity(const Tensor& z, const Tensor& query_weights, const Tensor& key, QueryMode mode) {
  switch (mode) {
    case QueryMode::weighted:
      return row_sum(mul(l2_normalize(mul(z, query_weights)), key));
    case QueryMode::weighted_raw:
      return row_sum(mul(mul(z, query_weights), key));
    case QueryMode::unweighted:
      return row_sum(mul(z, key));
  }
  throw ConfigError("query_similarity: unknown mode");
}

Selection select(const PrototypeKeys& keys, const Tensor& z, std::span<const Tensor> query_weights, QueryMode mode) {
  if (keys.empty()) throw StateError("select: empty key set");
  if (z.rows() != 1 || z.cols() != keys.matrix.cols()) {
    throw ShapeError("select: query " + z.shape().str() + " does not match key width " +
                     std::to_string(keys.matrix.cols()));
  }
  const bool weighted = mode != QueryMode::unweighted;
  if (weighted && query_weights.size() != keys.classes.size()) {
    throw ShapeError("select: need one query-weight vector per key");
  }
  const Tensor zc = z.detach();
  Selection sel;
  sel.similarities.resize(keys.classes.size());
  for (std::size_t i = 0; i < keys.classes.size(); ++i) {
    const Tensor a = weighted ? query_weights[i].detach() : Tensor();
    sel.similarities[i] = query_similarity(zc, a, slice_rows(keys.matrix, i, 1), mode).item();
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < sel.similarities.size(); ++i) {
    if (sel.similarities[i] > sel.similarities[best]) best = i;
  }
  sel.index = best;
  sel.class_id = keys.classes[best];
  sel.similarity = sel.similarities[best];
  const Tensor key = slice_rows(keys.matrix, best, 1);
  sel.similarity_tensor = weighted ? query_similarity(zc, query_weights[best], key, mode)
                                   : Tensor::scalar(sel.similarity);
  return sel;
}

Selection select(const PrototypeKeys& keys, const Tensor& z, const PromptCodebooks& books, QueryMode mode) {
  std::vector<Tensor> weights;
  if (mode != QueryMode::unweighted) {
    weights.reserve(keys.classes.size());
    for (int c : keys.classes) weights.push_back(books.at(c).query_weights);
  }
  return select(keys, z, weights, mode);
}

Tensor build_residual(const PromptCodebooks& books, const Selection& selection, bool confidence_modulation) {
  if (books.mode() != ConditioningMode::residual) {
    throw StateError("build_residual: codebook is in prefix mode");
  }
  const Tensor& q = books.at(selection.class_id).second;
  if (!confidence_modulation) return q;
  const Tensor sim = selection.similarity_tensor.defined() ? selection.similarity_tensor
                                                           : Tensor::scalar(selection.similarity);
  return mul(q, sim);
}

PrefixPrompts prefix_tuning_condition(const PromptCodebooks& books, const Selection& selection) {
  if (books.mode() != ConditioningMode::prefix) {
    throw StateError("prefix_tuning_condition: codebook was not built in prefix mode");
  }
  const Tensor& q = books.at(selection.class_id).second;
  const std::size_t tokens = books.prefix_tokens();
  const std::size_t width = books.config().d_prime;
  PrefixPrompts out;
  for (std::size_t l = 0; l < books.layers(); ++l) {
    const Tensor row = slice_rows(q, l, 1);
    out.keys.push_back(reshape(slice_cols(row, 0, tokens * width), tokens, width));
    out.values.push_back(reshape(slice_cols(row, tokens * width, tokens * width), tokens, width));
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {
constexpr char kBookMagic[] = "STARBOOK";
constexpr std::uint32_t kBookVersion = 1;

void write_tensor(BinaryWriter& w, const Tensor& t) {
  for (double v : t.data()) w.f64(v);
}

Tensor read_tensor(BinaryReader& r, std::size_t rows, std::size_t cols) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = r.f64();
  return Tensor::from_data(rows, cols, std::move(v));
}
}  // namespace

void save_codebooks(const std::filesystem::path& path, const PromptCodebooks& books) {
  BinaryWriter w;
  w.bytes(std::string_view(kBookMagic, 8));
  w.u32(kBookVersion);
  w.u32(static_cast<std::uint32_t>(books.config().d));
  w.u32(static_cast<std::uint32_t>(books.layers()));
  w.u32(static_cast<std::uint32_t>(books.second_width()));
  w.u8(static_cast<std::uint8_t>(books.mode()));
  w.u32(static_cast<std::uint32_t>(books.prefix_tokens()));
  w.u32(static_cast<std::uint32_t>(books.classes().size()));
  for (int c : books.classes()) {
    const ClassPrompts& e = books.at(c);
    w.u32(static_cast<std::uint32_t>(c));
    w.u32(static_cast<std::uint32_t>(e.task));
    w.u8(e.trainable ? 1 : 0);
    write_tensor(w, e.prompt);
    write_tensor(w, e.second);
    write_tensor(w, e.query_weights);
  }
  w.save(path);
}

PromptCodebooks load_codebooks(const std::filesystem::path& path, const EncoderConfig& config) {
  BinaryReader r = BinaryReader::open(path);
  r.expect_magic(std::string_view(kBookMagic, 8));
  const std::uint32_t version = r.u32();
  if (version != kBookVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t d = r.u32();
  const std::uint32_t layers = r.u32();
  const std::uint32_t width = r.u32();
  const std::uint8_t mode = r.u8();
  const std::uint32_t tokens = r.u32();
  if (mode > 1) throw FormatError(path.string() + ": unknown conditioning mode");
  PromptCodebooks books(config, static_cast<ConditioningMode>(mode), tokens);
  if (d != config.d || layers != config.layers || width != books.second_width()) {
    throw FormatError(path.string() + ": codebook dimensions do not match the encoder configuration");
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    ClassPrompts e;
    e.class_id = static_cast<int>(r.u32());
    e.task = static_cast<int>(r.u32());
    e.trainable = r.u8() != 0;
    e.prompt = read_tensor(r, 1, d);
    e.second = read_tensor(r, layers, width);
    e.query_weights = read_tensor(r, 1, d);
    const std::string tag = std::to_string(e.class_id);
    e.prompt.set_name("p_" + tag).set_requires_grad(e.trainable);
    e.second.set_name("Q_" + tag).set_requires_grad(e.trainable);
    e.query_weights.set_name("A_" + tag).set_requires_grad(e.trainable);
    books.insert(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after codebooks");
  return books;
}

}  // namespace starprompt
