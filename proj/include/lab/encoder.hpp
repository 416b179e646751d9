// Copyright 2026 The VLA Adapt Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/autodiff.hpp"
#include "lab/image.hpp"
#include "lab/nn.hpp"
#include "lab/params.hpp"
#include "lab/rng.hpp"

namespace lab::vision {

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t mlp_ratio = 4;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// Visual tokens of one image: [N x D].
struct TokenSequence {
  Tensor tokens;

  std::size_t length() const { return tokens.dim(0); }
  std::size_t width() const { return tokens.dim(1); }
};

// Rows are patches in raster order; each row lists the patch pixels in
// raster order with interleaved RGB.
// Learned task-id table standing in for a language embedding.
struct TaskEmbedding {
  std::size_t task_id = 0;
  Tensor embedding;  // [1 x D]
};

void init_task_table(ParamStore& store, std::size_t vocab, std::size_t width, Rng& rng);
TaskEmbedding task_embedding(const ParamStore& store, std::size_t task_id);

Tensor patchify(const Image& image, const EncoderConfig& cfg);

// Registers every encoder parameter under "encoder/". Weights are N(0, 0.02).
void init_encoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng);

// The linear layers inside the transformer blocks (q, k, v, out, mlp/up,
// mlp/down per block); the patch-embedding projection is not listed.
std::vector<nn::LinearSpec> encoder_linear_layers(const EncoderConfig& cfg);

struct EncodeOptions {
  bool add_position = true;
};

// Patch embeddings before position encoding and attention: [B, N, D].
ad::Var embed_patches(ad::Tape& tape, const ParamStore& store, const EncoderConfig& cfg,
                      std::span<const Image> images);

// Full forward pass: [B, N, D]. Attention among visual tokens is
// unmasked (bidirectional). A NaN/Inf raises NumericError naming the layer.
ad::Var encode_batch(ad::Tape& tape, const ParamStore& store, const EncoderConfig& cfg,
                     std::span<const Image> images, const EncodeOptions& opts = {});

TokenSequence encode(const Image& image, const EncoderConfig& cfg, const ParamStore& store,
                     const EncodeOptions& opts = {});

// Per-dimension mean over every token of every sequence.
Tensor mean_token(std::span<const TokenSequence> dataset);

}  // namespace lab::vision
