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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "starprompt/tensor.hpp"

namespace starprompt {

/// Dimensions of the three frozen networks.
struct EncoderConfig {
  std::size_t d = 32;          ///< joint text/vision embedding width
  std::size_t d_prime = 64;    ///< main transformer width
  std::size_t layers = 4;      ///< main transformer depth L
  std::size_t heads = 4;
  std::size_t seq_len = 17;    ///< main transformer tokens: patches + classification token
  std::size_t patch_dim = 8;   ///< raw features per patch
  std::size_t mlp_ratio = 4;
  std::size_t text_layers = 1;
  std::size_t text_heads = 2;
  std::size_t vision_layers = 1;
  std::size_t vision_heads = 2;
  double tau = 0.01;           ///< temperature of the text/vision similarity logits

  void validate() const;
  [[nodiscard]] std::size_t patches() const { return seq_len - 1; }
  /// Flattened raw-input length: patches() * patch_dim.
  [[nodiscard]] std::size_t input_dim() const { return patches() * patch_dim; }
};

struct BlockWeights {
  Tensor wq, wk, wv, wo;  // width x width, applied as x * W
  Tensor w1, b1;          // width x hidden, 1 x hidden
  Tensor w2, b2;          // hidden x width, 1 x width
  std::size_t heads = 1;
};

/// Frozen weights of the text encoder, the vision encoder and the main
/// transformer. None of these tensors ever requires grad.
struct FrozenStack {
  EncoderConfig config;

  Tensor text_pos;  // 2 x d
  std::vector<BlockWeights> text_blocks;
  Tensor text_proj;  // d x d, orthogonal

  Tensor vision_patch;  // patch_dim x d
  Tensor vision_pos;    // patches x d
  std::vector<BlockWeights> vision_blocks;
  Tensor vision_proj;  // d x d, orthogonal

  Tensor vit_patch;  // patch_dim x d_prime
  Tensor vit_cls;    // 1 x d_prime
  Tensor vit_pos;    // seq_len x d_prime
  std::vector<BlockWeights> vit_blocks;

  [[nodiscard]] std::uint64_t hash() const;
};

/// Builds all frozen weights from (config, seed): N(0, 1/fan_in) entries,
/// zero biases, orthogonal output projections.
FrozenStack build_stack(const EncoderConfig& config, std::uint64_t seed);

struct ClassNameEmbedding {
  int class_id = 0;
  Tensor vector;  // 1 x d, unit norm
};

/// Unit d-vector derived from a 64-bit FNV-1a hash of the name.
ClassNameEmbedding class_name_embed(std::string_view name, const EncoderConfig& config, int class_id = 0);

/// Pooled, l2-normalized text embedding of the two-token sequence
/// [prompt_token; class embedding]. Differentiable w.r.t. prompt_token.
Tensor text_encode(const FrozenStack& stack, const Tensor& prompt_token, const ClassNameEmbedding& class_embed);

/// l2-normalized embedding of a patches x patch_dim input (a flattened
/// 1 x input_dim row is also accepted).
Tensor vision_encode(const FrozenStack& stack, const Tensor& x);

enum class ResidualTarget { all_tokens, cls_only };

/// Per-layer prefix tokens prepended to the projected attention keys/values.
struct PrefixPrompts {
  std::vector<Tensor> keys;    // one P x d_prime per layer
  std::vector<Tensor> values;  // one P x d_prime per layer
};

struct Conditioning {
  std::optional<Tensor> residuals;  // L x d_prime
  std::optional<PrefixPrompts> prefix;
  ResidualTarget target = ResidualTarget::all_tokens;
};

/// Runs the main transformer and returns the classification-token row of
/// the last block (1 x d_prime). Residual row l is added after the attention
/// sub-block of block l, before its MLP branch.
Tensor vit_forward(const FrozenStack& stack, const Tensor& x, const Conditioning& conditioning = {});
Tensor vit_forward(const FrozenStack& stack, const Tensor& x, const Tensor& residuals);

/// One pre-norm transformer block, exposed for tests:
/// e' = MSA(LN(e)) + e [+ residual]; out = MLP(LN(e')) + e'.
Tensor transformer_block(const BlockWeights& w, const Tensor& e, const Tensor* residual_row,
                         ResidualTarget target, const Tensor* prefix_keys, const Tensor* prefix_values);

}  // namespace starprompt
