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
#include "starprompt/encoders.hpp"

#include <cmath>

#include "starprompt/errors.hpp"
#include "starprompt/rng.hpp"

namespace starprompt {

namespace {

Tensor random_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::vector<double> data(rows * cols);
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_data(rows, cols, std::move(data));
}

/// Modified Gram-Schmidt on the rows of a random Gaussian matrix.
Tensor random_orthogonal(Rng& rng, std::size_t n) {
  std::vector<double> q(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      for (std::size_t c = 0; c < n; ++c) q[i * n + c] = rng.normal();
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += q[i * n + c] * q[j * n + c];
        for (std::size_t c = 0; c < n; ++c) q[i * n + c] -= dot * q[j * n + c];
      }
      double norm = 0.0;
      for (std::size_t c = 0; c < n; ++c) norm += q[i * n + c] * q[i * n + c];
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (std::size_t c = 0; c < n; ++c) q[i * n + c] /= norm;
        break;
      }
    }
  }
  return Tensor::from_data(n, n, std::move(q));
}

BlockWeights random_block(Rng& rng, std::size_t width, std::size_t heads, std::size_t mlp_ratio) {
  const double s = 1.0 / std::sqrt(static_cast<double>(width));
  const std::size_t hidden = width * mlp_ratio;
  BlockWeights w;
  w.wq = random_normal(rng, width, width, s);
  w.wk = random_normal(rng, width, width, s);
  w.wv = random_normal(rng, width, width, s);
  w.wo = random_normal(rng, width, width, s);
  w.w1 = random_normal(rng, width, hidden, s);
  w.b1 = Tensor::zeros(1, hidden);
  w.w2 = random_normal(rng, hidden, width, 1.0 / std::sqrt(static_cast<double>(hidden)));
  w.b2 = Tensor::zeros(1, width);
  w.heads = heads;
  return w;
}

Tensor attention(const BlockWeights& w, const Tensor& h, const Tensor* prefix_keys, const Tensor* prefix_values) {
  const std::size_t width = h.cols();
  const std::size_t head_dim = width / w.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Tensor q = matmul(h, w.wq);
  Tensor k = matmul(h, w.wk);
  Tensor v = matmul(h, w.wv);
  if (prefix_keys != nullptr) {
    const Tensor kparts[] = {*prefix_keys, k};
    const Tensor vparts[] = {*prefix_values, v};
    k = concat_rows(kparts);
    v = concat_rows(vparts);
  }
  std::vector<Tensor> outs;
  outs.reserve(w.heads);
  for (std::size_t i = 0; i < w.heads; ++i) {
    const Tensor qh = slice_cols(q, i * head_dim, head_dim);
    const Tensor kh = slice_cols(k, i * head_dim, head_dim);
    const Tensor vh = slice_cols(v, i * head_dim, head_dim);
    const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
    outs.push_back(matmul(weights, vh));
  }
  const Tensor merged = w.heads == 1 ? outs.front() : concat_cols(outs);
  return matmul(merged, w.wo);
}

Tensor run_blocks(const std::vector<BlockWeights>& blocks, Tensor e) {
  for (const BlockWeights& b : blocks) {
    e = transformer_block(b, e, nullptr, ResidualTarget::all_tokens, nullptr, nullptr);
  }
  return e;
}

void expect_row(const char* op, const Tensor& t, std::size_t cols) {
  if (t.rows() != 1 || t.cols() != cols) {
    throw ShapeError(std::string(op) + ": expected a 1x" + std::to_string(cols) + " vector, got " + t.shape().str());
  }
}

Tensor as_patch_grid(const char* op, const EncoderConfig& cfg, const Tensor& x) {
  if (x.rows() == cfg.patches() && x.cols() == cfg.patch_dim) {
    return x;
  }
  if (x.rows() == 1 && x.cols() == cfg.input_dim()) {
    return reshape(x, cfg.patches(), cfg.patch_dim);
  }
  throw ShapeError(std::string(op) + ": input " + x.shape().str() + " is neither " +
                   Shape{cfg.patches(), cfg.patch_dim}.str() + " nor " + Shape{1, cfg.input_dim()}.str());
}

}  // namespace

void EncoderConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("EncoderConfig: ") + name + " must be >= 1");
  };
  positive(d, "d");
  positive(d_prime, "d_prime");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(patch_dim, "patch_dim");
  positive(mlp_ratio, "mlp_ratio");
  positive(text_layers, "text_layers");
  positive(text_heads, "text_heads");
  positive(vision_layers, "vision_layers");
  positive(vision_heads, "vision_heads");
  if (seq_len < 2) throw ConfigError("EncoderConfig: seq_len must be >= 2 (one patch plus the classification token)");
  if (d_prime % heads != 0) throw ConfigError("EncoderConfig: d_prime must be divisible by heads");
  if (d % text_heads != 0 || d % vision_heads != 0) {
    throw ConfigError("EncoderConfig: d must be divisible by text_heads and vision_heads");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("EncoderConfig: tau must be > 0");
}

std::uint64_t FrozenStack::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_block = [&h](const BlockWeights& b) {
    for (const Tensor* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.b1, &b.w2, &b.b2}) h = hash_tensor(*t, h);
  };
  for (const Tensor* t : {&text_pos, &text_proj, &vision_patch, &vision_pos, &vision_proj, &vit_patch, &vit_cls,
                          &vit_pos}) {
    h = hash_tensor(*t, h);
  }
  for (const auto& b : text_blocks) mix_block(b);
  for (const auto& b : vision_blocks) mix_block(b);
  for (const auto& b : vit_blocks) mix_block(b);
  return h;
}

FrozenStack build_stack(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  FrozenStack s;
  s.config = config;
  Rng text_rng = Rng(seed).fork(1);
  Rng vision_rng = Rng(seed).fork(2);
  Rng vit_rng = Rng(seed).fork(3);

  s.text_pos = random_normal(text_rng, 2, config.d, 0.02);
  for (std::size_t i = 0; i < config.text_layers; ++i) {
    s.text_blocks.push_back(random_block(text_rng, config.d, config.text_heads, config.mlp_ratio));
  }
  s.text_proj = random_orthogonal(text_rng, config.d);

  s.vision_patch = random_normal(vision_rng, config.patch_dim, config.d, 1.0 / std::sqrt(double(config.patch_dim)));
  s.vision_pos = random_normal(vision_rng, config.patches(), config.d, 0.02);
  for (std::size_t i = 0; i < config.vision_layers; ++i) {
    s.vision_blocks.push_back(random_block(vision_rng, config.d, config.vision_heads, config.mlp_ratio));
  }
  s.vision_proj = random_orthogonal(vision_rng, config.d);

  s.vit_patch = random_normal(vit_rng, config.patch_dim, config.d_prime, 1.0 / std::sqrt(double(config.patch_dim)));
  s.vit_cls = random_normal(vit_rng, 1, config.d_prime, 1.0);
  s.vit_pos = random_normal(vit_rng, config.seq_len, config.d_prime, 0.02);
  for (std::size_t i = 0; i < config.layers; ++i) {
    s.vit_blocks.push_back(random_block(vit_rng, config.d_prime, config.heads, config.mlp_ratio));
  }
  return s;
}

ClassNameEmbedding class_name_embed(std::string_view name, const EncoderConfig& config, int class_id) {
  if (name.empty()) {
    throw ConfigError("class_name_embed: empty class name");
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  Rng rng(h);
  std::vector<double> v(config.d);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return ClassNameEmbedding{class_id, Tensor::row(std::move(v))};
}

Tensor transformer_block(const BlockWeights& w, const Tensor& e, const Tensor* residual_row, ResidualTarget target,
                         const Tensor* prefix_keys, const Tensor* prefix_values) {
  Tensor mid = add(attention(w, layer_norm(e), prefix_keys, prefix_values), e);
  if (residual_row != nullptr) {
    if (target == ResidualTarget::all_tokens || e.rows() == 1) {
      mid = add(mid, *residual_row);
    } else {
      const Tensor parts[] = {*residual_row, Tensor::zeros(e.rows() - 1, e.cols())};
      mid = add(mid, concat_rows(parts));
    }
  }
  const Tensor hidden = gelu(add(matmul(layer_norm(mid), w.w1), w.b1));
  return add(add(matmul(hidden, w.w2), w.b2), mid);
}

Tensor text_encode(const FrozenStack& stack, const Tensor& prompt_token, const ClassNameEmbedding& class_embed) {
  const std::size_t d = stack.config.d;
  expect_row("text_encode", prompt_token, d);
  expect_row("text_encode", class_embed.vector, d);
  const Tensor parts[] = {prompt_token, class_embed.vector};
  Tensor tokens = add(concat_rows(parts), stack.text_pos);
  tokens = run_blocks(stack.text_blocks, tokens);
  return l2_normalize(matmul(layer_norm(mean_rows(tokens)), stack.text_proj));
}

Tensor vision_encode(const FrozenStack& stack, const Tensor& x) {
  const Tensor grid = as_patch_grid("vision_encode", stack.config, x);
  Tensor tokens = add(matmul(grid, stack.vision_patch), stack.vision_pos);
  tokens = run_blocks(stack.vision_blocks, tokens);
  return l2_normalize(matmul(layer_norm(mean_rows(tokens)), stack.vision_proj));
}

Tensor vit_forward(const FrozenStack& stack, const Tensor& x, const Conditioning& conditioning) {
  const EncoderConfig& cfg = stack.config;
  const Tensor grid = as_patch_grid("vit_forward", cfg, x);
  const std::size_t layers = stack.vit_blocks.size();
  if (conditioning.residuals && (conditioning.residuals->rows() != layers ||
                                 conditioning.residuals->cols() != cfg.d_prime)) {
    throw ShapeError("vit_forward: residuals " + conditioning.residuals->shape().str() + " do not match " +
                     Shape{layers, cfg.d_prime}.str());
  }
  if (conditioning.prefix) {
    const PrefixPrompts& p = *conditioning.prefix;
    if (p.keys.size() != layers || p.values.size() != layers) {
      throw ShapeError("vit_forward: prefix prompts must provide one key and one value block per layer");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      if (p.keys[l].cols() != cfg.d_prime || p.values[l].shape() != p.keys[l].shape()) {
        throw ShapeError("vit_forward: prefix prompts for layer " + std::to_string(l) + " have shapes " +
                         p.keys[l].shape().str() + " and " + p.values[l].shape().str());
      }
    }
  }
  const Tensor parts[] = {stack.vit_cls, matmul(grid, stack.vit_patch)};
  Tensor e = add(concat_rows(parts), stack.vit_pos);
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor residual_row;
    if (conditioning.residuals) {
      residual_row = slice_rows(*conditioning.residuals, l, 1);
    }
    const Tensor* pk = conditioning.prefix ? &conditioning.prefix->keys[l] : nullptr;
    const Tensor* pv = conditioning.prefix ? &conditioning.prefix->values[l] : nullptr;
    e = transformer_block(stack.vit_blocks[l], e, residual_row.defined() ? &residual_row : nullptr,
                          conditioning.target, pk, pv);
  }
  return slice_rows(e, 0, 1);
}

Tensor vit_forward(const FrozenStack& stack, const Tensor& x, const Tensor& residuals) {
  Conditioning c;
  c.residuals = residuals;
  return vit_forward(stack, x, c);
}

}  // namespace starprompt
