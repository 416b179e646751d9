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

#include "lab/encoder.hpp"

#include "lab/error.hpp"

namespace lab::vision {

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size) {
    throw ContractError("image_size " + std::to_string(image_size) +
                        " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (n_heads == 0 || d_model == 0 || d_model % n_heads) {
    throw ContractError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
  }
  if (n_layers == 0 || mlp_ratio == 0) throw ContractError("n_layers and mlp_ratio must be >= 1");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"d_model", c.d_model},
       {"n_layers", c.n_layers},     {"n_heads", c.n_heads},       {"mlp_ratio", c.mlp_ratio}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("patch_size").get_to(c.patch_size);
  j.at("d_model").get_to(c.d_model);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
}

void init_task_table(ParamStore& store, std::size_t vocab, std::size_t width, Rng& rng) {
  if (vocab == 0) throw ContractError("task vocabulary must be non-empty");
  store.add("encoder/task_table", sample_gaussian(rng, {vocab, width}, 0.02));
}

TaskEmbedding task_embedding(const ParamStore& store, std::size_t task_id) {
  const Tensor& table = store.value("encoder/task_table");
  if (task_id >= table.dim(0)) {
    throw ContractError("task id " + std::to_string(task_id) + " outside vocabulary of " +
                        std::to_string(table.dim(0)));
  }
  const std::size_t d = table.dim(1);
  Tensor row({1, d});
  for (std::size_t j = 0; j < d; ++j) row[j] = table.at(task_id, j);
  return {task_id, row};
}

Tensor patchify(const Image& image, const EncoderConfig& cfg) {
  cfg.validate();
  if (image.height != cfg.image_size || image.width != cfg.image_size) {
    throw ShapeError("image is " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + ", encoder expects " +
                     std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
  }
  const std::size_t p = cfg.patch_size, g = cfg.grid();
  Tensor out({cfg.num_patches(), cfg.patch_dim()});
  double* dst = out.data().data();
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t c = 0; c < 3; ++c) *dst++ = image.at(gy * p + py, gx * p + px, c);
  return out;
}

namespace {
std::string block_name(std::size_t i) { return "encoder/block" + std::to_string(i); }
}  // namespace

std::vector<nn::LinearSpec> encoder_linear_layers(const EncoderConfig& cfg) {
  const std::size_t d = cfg.d_model, h = cfg.d_model * cfg.mlp_ratio;
  std::vector<nn::LinearSpec> out;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string b = block_name(i);
    out.push_back({b + "/attn/q", d, d});
    out.push_back({b + "/attn/k", d, d});
    out.push_back({b + "/attn/v", d, d});
    out.push_back({b + "/attn/out", d, d});
    out.push_back({b + "/mlp/up", d, h});
    out.push_back({b + "/mlp/down", h, d});
  }
  return out;
}

void init_encoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  nn::init_linear(store, {"encoder/patch_embed", cfg.patch_dim(), d}, rng);
  store.add("encoder/pos_embed", sample_gaussian(rng, {cfg.num_patches(), d}, 0.02));
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    nn::init_l2_norm(store, block_name(i) + "/norm1", d);
    nn::init_l2_norm(store, block_name(i) + "/norm2", d);
  }
  for (const auto& spec : encoder_linear_layers(cfg)) nn::init_linear(store, spec, rng);
  nn::init_l2_norm(store, "encoder/final_norm", d);
}

ad::Var embed_patches(ad::Tape& tape, const ParamStore& store, const EncoderConfig& cfg,
                      std::span<const Image> images) {
  if (images.empty()) throw ContractError("encode needs at least one image");
  const std::size_t n = cfg.num_patches(), pd = cfg.patch_dim();
  Tensor patches({images.size() * n, pd});
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Tensor p = patchify(images[b], cfg);
    std::copy(p.data().begin(), p.data().end(), patches.data().begin() + b * n * pd);
  }
  // Pixels enter the projection rescaled to [-1, 1].
  for (double& v : patches.data()) v = 2.0 * v - 1.0;
  ad::Var x = nn::linear(tape, store, "encoder/patch_embed", tape.constant(std::move(patches)));
  return ad::reshape(x, {images.size(), n, cfg.d_model});
}

ad::Var encode_batch(ad::Tape& tape, const ParamStore& store, const EncoderConfig& cfg,
                     std::span<const Image> images, const EncodeOptions& opts) {
  std::string stage = "encoder/patch_embed";
  try {
    ad::Var x = embed_patches(tape, store, cfg, images);
    if (opts.add_position) x = nn::add_tiled(x, tape.param(store, "encoder/pos_embed"));
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
      const std::string b = block_name(i);
      stage = b;
      ad::Var h = nn::l2_norm(tape, store, b + "/norm1", x);
      ad::Var q = nn::linear_nd(tape, store, b + "/attn/q", h);
      ad::Var k = nn::linear_nd(tape, store, b + "/attn/k", h);
      ad::Var v = nn::linear_nd(tape, store, b + "/attn/v", h);
      ad::Var a = nn::attention(q, k, v, cfg.n_heads);
      x = ad::add(x, nn::linear_nd(tape, store, b + "/attn/out", a));
      h = nn::l2_norm(tape, store, b + "/norm2", x);
      h = ad::gelu(nn::linear_nd(tape, store, b + "/mlp/up", h));
      x = ad::add(x, nn::linear_nd(tape, store, b + "/mlp/down", h));
    }
    stage = "encoder/final_norm";
    return nn::l2_norm(tape, store, "encoder/final_norm", x);
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  }
}

TokenSequence encode(const Image& image, const EncoderConfig& cfg, const ParamStore& store,
                     const EncodeOptions& opts) {
  ad::Tape tape;
  ad::Var out = encode_batch(tape, store, cfg, std::span<const Image>(&image, 1), opts);
  return TokenSequence{out.value().reshaped({cfg.num_patches(), cfg.d_model})};
}

Tensor mean_token(std::span<const TokenSequence> dataset) {
  if (dataset.empty()) throw ContractError("mean_token of an empty dataset");
  const std::size_t d = dataset[0].width();
  Tensor acc({d});
  std::size_t count = 0;
  for (const auto& seq : dataset) {
    if (seq.width() != d) throw ShapeError("token width mismatch in dataset");
    for (std::size_t i = 0; i < seq.length(); ++i)
      for (std::size_t j = 0; j < d; ++j) acc[j] += seq.tokens.at(i, j);
    count += seq.length();
  }
  for (double& v : acc.data()) v /= static_cast<double>(count);
  return acc;
}

}  // namespace lab::vision
