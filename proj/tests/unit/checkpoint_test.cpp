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

#include "lab/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "lab/error.hpp"
#include "lab/rng.hpp"

namespace lab {
namespace {

TEST(CheckpointTest, EncodeDecodePreservesEveryBit) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Checkpoint c;
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i) {
      c.arrays.emplace("a/" + std::to_string(i),
                       sample_gaussian(rng, {1 + rng.below(4), 1 + rng.below(4)}));
    }
    if (trial % 2) c.base_hash = rng.next_u64();
    c.meta["trial"] = trial;
    const auto bytes = encode_checkpoint(c);
    const Checkpoint d = decode_checkpoint(bytes);
    ASSERT_EQ(d.arrays.size(), c.arrays.size());
    for (const auto& [name, t] : c.arrays) EXPECT_TRUE(d.arrays.at(name).bit_equal(t));
    EXPECT_EQ(d.base_hash, c.base_hash);
    EXPECT_EQ(d.meta, c.meta);
    EXPECT_EQ(encode_checkpoint(d), bytes);
  }
}

TEST(CheckpointTest, LayoutIsLittleEndianAfterJsonHeader) {
  Checkpoint c;
  c.arrays.emplace("x", Tensor::vector({1.0}));
  const auto bytes = encode_checkpoint(c);
  ASSERT_GE(bytes.size(), 24u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "LABCKPT1");
  // 1.0 == 0x3ff0000000000000, stored low byte first.
  EXPECT_EQ(bytes[bytes.size() - 1], 0x3f);
  EXPECT_EQ(bytes[bytes.size() - 2], 0xf0);
  EXPECT_EQ(bytes[bytes.size() - 8], 0x00);
}

TEST(CheckpointTest, RejectsGarbageAndOtherVersions) {
  EXPECT_THROW(decode_checkpoint({1, 2, 3}), ParseError);
  Checkpoint c;
  c.arrays.emplace("x", Tensor::vector({1.0}));
  auto bytes = encode_checkpoint(c);
  const std::string text(bytes.begin() + 16, bytes.end() - 8);
  const auto pos = text.find("\"format_version\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes[16 + pos + 17] = '7';
  EXPECT_THROW(decode_checkpoint(bytes), ParseError);
}

TEST(CheckpointTest, DeltaDetection) {
  Checkpoint c;
  c.arrays.emplace("adapter/ftm/gamma", Tensor({4}));
  EXPECT_FALSE(c.is_delta());
  c.base_hash = 5;
  EXPECT_TRUE(c.is_delta());
  c.arrays.emplace("encoder/x", Tensor({1}));
  EXPECT_FALSE(c.is_delta());
}

TEST(CheckpointTest, FileRoundTripIntoStore) {
  ParamStore store;
  store.add("a", Tensor::vector({1, 2, 3}));
  store.add("b", Tensor::vector({4}));
  const auto path = std::filesystem::temp_directory_path() / "lab_ckpt_test.bin";
  save_checkpoint(path, checkpoint_from(store));
  ParamStore other;
  other.add("a", Tensor({3}));
  apply_checkpoint(load_checkpoint(path), other);
  EXPECT_TRUE(other.value("a").bit_equal(store.value("a")));
  EXPECT_TRUE(other.value("b").bit_equal(store.value("b")));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace lab
