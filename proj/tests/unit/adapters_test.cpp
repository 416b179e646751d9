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

#include "lab/adapters.hpp"

#include <gtest/gtest.h>

#include "lab/error.hpp"
#include "lab/svd.hpp"

namespace lab::adapters {
namespace {

using vision::EncoderConfig;

Image random_image(std::uint64_t seed) {
  Rng rng(seed);
  Image img(32, 32);
  for (double& v : img.pixels) v = rng.uniform();
  return img;
}

TEST(AdapterKindTest, ParseRoundTrip) {
  for (const auto& k : {AdapterKind::none(), AdapterKind::ftm(), AdapterKind::fla(8),
                        AdapterKind::prompt(2), AdapterKind::full_lora(16)}) {
    EXPECT_EQ(AdapterKind::parse(k.to_string()), k);
  }
  EXPECT_EQ(AdapterKind::parse("fla"), AdapterKind::fla(16));
  EXPECT_THROW(AdapterKind::parse("film"), ParseError);
  EXPECT_THROW(AdapterKind::parse("fla:x"), ParseError);
  EXPECT_THROW(AdapterKind::parse("ftm:3"), ParseError);
}

TEST(FtmTest, ZeroIsBitIdentity) {
  Rng rng(1);
  const Tensor f = sample_gaussian(rng, {16, 64}, 1.0);
  EXPECT_TRUE(apply_ftm(f, FtmParams::identity(64)).bit_equal(f));
}

TEST(FtmTest, WorkedExample) {
  const Tensor out = apply_ftm(Tensor::matrix({{1, 2}}),
                               {Tensor::vector({0.5, -0.5}), Tensor::vector({1, 2})});
  EXPECT_TRUE(out.bit_equal(Tensor::matrix({{2.5, 3.0}})));
}

TEST(FtmTest, ScalarLoopOracle) {
  Rng rng(2);
  const Tensor f = sample_gaussian(rng, {9, 5}, 1.0);
  const FtmParams p{sample_gaussian(rng, {5}, 1.0), sample_gaussian(rng, {5}, 1.0)};
  const Tensor out = apply_ftm(f, p);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t d = 0; d < 5; ++d)
      EXPECT_NEAR(out.at(i, d), (1.0 + p.gamma[d]) * f.at(i, d) + p.beta[d], 1e-12);
}

TEST(FtmTest, TapeVersionMatches) {
  Rng rng(3);
  const Tensor f = sample_gaussian(rng, {2, 4, 3}, 1.0);
  const FtmParams p{sample_gaussian(rng, {3}, 1.0), sample_gaussian(rng, {3}, 1.0)};
  ad::Tape tape;
  const Tensor out =
      apply_ftm(tape.constant(f), tape.constant(p.gamma), tape.constant(p.beta)).value();
  const Tensor ref = apply_ftm(f.reshaped({8, 3}), p);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-15);
}

TEST(FtmTest, DimensionMismatch) {
  EXPECT_THROW(apply_ftm(Tensor({2, 3}), FtmParams::identity(4)), ShapeError);
}

TEST(FtmTest, AffineSuperposition) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const FtmParams p{sample_gaussian(rng, {6}, 1.0), sample_gaussian(rng, {6}, 1.0)};
    const Tensor f1 = sample_gaussian(rng, {4, 6}, 1.0), f2 = sample_gaussian(rng, {4, 6}, 1.0);
    const double a = rng.uniform() * 4.0 - 2.0, b = rng.uniform() * 4.0 - 2.0;
    const Tensor zero_out = apply_ftm(Tensor({4, 6}), p);
    auto lin = [&](const Tensor& f) { return apply_ftm(f, p) - zero_out; };
    const Tensor lhs = lin(a * f1 + b * f2);
    const Tensor rhs = a * lin(f1) + b * lin(f2);
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
  }
}

TEST(PromptTest, EmptyIsIdentity) {
  const Tensor t = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_TRUE(apply_prompt(t, PromptParams{}).bit_equal(t));
}

TEST(PromptTest, PrependsRows) {
  Rng rng(5);
  const Tensor t = sample_gaussian(rng, {16, 8}, 1.0);
  const PromptParams p{sample_gaussian(rng, {2, 8}, 0.02)};
  const Tensor out = apply_prompt(t, p);
  ASSERT_EQ(out.shape(), (Shape{18, 8}));
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(out.at(i + 2, d), t.at(i, d));
  for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(out.at(1, d), p.prefix_tokens.at(1, d));
  EXPECT_THROW(apply_prompt(t, PromptParams{Tensor({2, 7})}), ShapeError);
}

TEST(PromptTest, TapeVersionTilesOverBatch) {
  Rng rng(6);
  const Tensor t = sample_gaussian(rng, {3, 16, 8}, 1.0);
  const Tensor prompt = sample_gaussian(rng, {2, 8}, 1.0);
  ad::Tape tape;
  ad::Var pv = tape.leaf(prompt);
  ad::Var out = apply_prompt(tape.constant(t), pv);
  ASSERT_EQ(out.shape(), (Shape{3, 18, 8}));
  // Dropping the prompt rows restores the input.
  EXPECT_TRUE(ad::slice(out, 1, 2, 16).value().bit_equal(t));
  // Each batch copy contributes to the prompt gradient.
  const auto g = tape.backward(ad::sum(out));
  EXPECT_TRUE(g.of(pv).bit_equal(Tensor({2, 8}, 3.0)));
}

TEST(EffectiveWeightTest, ZeroBIsW) {
  Rng rng(7);
  const Tensor w = sample_gaussian(rng, {5, 4}, 1.0);
  const LoraUpdate u{"l", sample_gaussian(rng, {2, 4}, 1.0), Tensor({5, 2})};
  EXPECT_TRUE(effective_weight(u, w).bit_equal(w));
}

TEST(EffectiveWeightTest, RankOneUnitUpdate) {
  Rng rng(8);
  const Tensor w = sample_gaussian(rng, {3, 3}, 1.0);
  LoraUpdate u{"l", Tensor({1, 3}), Tensor({3, 1})};
  u.a[0] = 1.0;
  u.b[0] = 1.0;
  const Tensor out = effective_weight(u, w);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(out[i], w[i] + (i == 0 ? 1.0 : 0.0));
}

TEST(EffectiveWeightTest, LowRankCertificate) {
  Rng rng(9);
  for (std::size_t r : {1u, 2u, 4u, 8u}) {
    const LoraUpdate u{"l", sample_gaussian(rng, {r, 24}, 1.0), sample_gaussian(rng, {20, r}, 1.0)};
    const Svd s = svd(u.delta());
    for (std::size_t i = r; i < s.sigma.size(); ++i) EXPECT_LT(s.sigma[i], 1e-10) << r;
    EXPECT_LE(numerical_rank(u.delta(), 1e-10), r);
  }
}

TEST(EffectiveWeightTest, ShapeMismatch) {
  const LoraUpdate u{"l", Tensor({2, 4}), Tensor({5, 2})};
  EXPECT_THROW(effective_weight(u, Tensor({4, 5})), ShapeError);
}

TEST(FlaTest, AttachKeepsEncoderBitIdentical) {
  EncoderConfig cfg;
  ParamStore store;
  Rng rng(10);
  vision::init_encoder(store, cfg, rng);
  const Image img = random_image(11);
  const Tensor before = vision::encode(img, cfg, store).tokens;
  const auto updates = attach_fla(store, cfg, 16, rng);
  EXPECT_EQ(updates.size(), 24u);
  EXPECT_TRUE(vision::encode(img, cfg, store).tokens.bit_equal(before));
  EXPECT_FALSE(store.contains("adapter/lora/encoder/patch_embed/A"));
}

TEST(FlaTest, NonzeroUpdateChangesOutput) {
  EncoderConfig cfg;
  ParamStore store;
  Rng rng(12);
  vision::init_encoder(store, cfg, rng);
  attach_fla(store, cfg, 4, rng);
  const Image img = random_image(13);
  const Tensor before = vision::encode(img, cfg, store).tokens;
  store.set("adapter/lora/encoder/block0/attn/v/B", sample_gaussian(rng, {64, 4}, 0.5));
  EXPECT_GT(max_abs_diff(vision::encode(img, cfg, store).tokens, before), 1e-6);
}

TEST(FlaTest, PerLayerCount) {
  const std::vector<nn::LinearSpec> one{{"x", 64, 64}};
  ParamStore store;
  Rng rng(14);
  attach_lora(store, one, 16, rng);
  EXPECT_EQ(store.total_count(), 2048u);
}

TEST(FlaTest, RankTooLargeNamesLayer) {
  EncoderConfig cfg;
  ParamStore store;
  Rng rng(15);
  vision::init_encoder(store, cfg, rng);
  try {
    attach_fla(store, cfg, 33, rng);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder/block0/attn/q"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(store.contains("adapter/lora/encoder/block0/attn/q/A"));
  EXPECT_THROW(attach_fla(store, cfg, 0, rng), ContractError);
}

TEST(CountTrainableTest, Ftm) {
  EncoderConfig paper;
  paper.d_model = 2048;
  EXPECT_EQ(count_trainable(AdapterKind::ftm(), paper), 4096u);
  EXPECT_EQ(count_trainable(AdapterKind::ftm(), EncoderConfig{}), 128u);
}

std::size_t registry_count(const AdapterKind& kind, const EncoderConfig& cfg,
                           std::span<const nn::LinearSpec> extra = {}) {
  ParamStore store;
  Rng rng(16);
  vision::init_encoder(store, cfg, rng);
  for (const auto& l : extra) nn::init_linear(store, l, rng);
  attach_adapter(store, kind, cfg, extra, rng);
  freeze_backbone(store);
  return store.trainable_count();
}

TEST(CountTrainableTest, MatchesRegistryEnumeration) {
  EncoderConfig cfg;
  // Square 64x64 wrapped layers only.
  cfg.mlp_ratio = 1;
  EXPECT_EQ(count_trainable(AdapterKind::fla(16), cfg), 24u * 2048u);
  EXPECT_EQ(registry_count(AdapterKind::fla(16), cfg), 49152u);

  const EncoderConfig def;
  const std::vector<nn::LinearSpec> expert{{"expert/a", 64, 64}, {"expert/b", 64, 2}};
  for (const auto& k : {AdapterKind::none(), AdapterKind::ftm(), AdapterKind::fla(4),
                        AdapterKind::fla(16), AdapterKind::prompt(2)}) {
    EXPECT_EQ(count_trainable(k, def), registry_count(k, def)) << k.to_string();
  }
  const std::vector<nn::LinearSpec> wide{{"expert/a", 64, 64}, {"expert/b", 64, 32}};
  EXPECT_EQ(count_trainable(AdapterKind::full_lora(8), def, wide),
            registry_count(AdapterKind::full_lora(8), def, wide));
  // A 2-wide output head only admits rank 1.
  EXPECT_THROW(registry_count(AdapterKind::full_lora(2), def, expert), ContractError);
}

TEST(FreezeTest, OnlyAdapterParamsTrainable) {
  EncoderConfig cfg;
  ParamStore store;
  Rng rng(17);
  vision::init_encoder(store, cfg, rng);
  attach_adapter(store, AdapterKind::ftm(), cfg, {}, rng);
  freeze_backbone(store);
  for (const auto& n : store.names()) EXPECT_EQ(store.get(n).trainable, is_adapter_param(n)) << n;
}

TEST(ReadBackTest, LoraAndFtm) {
  EncoderConfig cfg;
  cfg.n_layers = 1;
  ParamStore store;
  Rng rng(18);
  vision::init_encoder(store, cfg, rng);
  const auto ups = attach_fla(store, cfg, 2, rng);
  attach_ftm(store, cfg.d_model);
  const auto back = read_lora(store);
  ASSERT_EQ(back.size(), ups.size());
  for (const auto& u : back) {
    const auto it = std::find_if(ups.begin(), ups.end(),
                                 [&](const LoraUpdate& v) { return v.target_layer == u.target_layer; });
    ASSERT_NE(it, ups.end()) << u.target_layer;
    EXPECT_TRUE(it->a.bit_equal(u.a));
  }
  EXPECT_TRUE(read_ftm(store).gamma.bit_equal(Tensor({64})));
}

}  // namespace
}  // namespace lab::adapters
