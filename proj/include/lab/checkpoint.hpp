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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/params.hpp"
#include "lab/tensor.hpp"

namespace lab {

// On-disk layout (all integers and floats little-endian):
//
//   bytes 0..7    magic "LABCKPT1"
//   bytes 8..15   u64 length N of the JSON header
//   next N bytes  JSON header:
//                   {"format_version": 1, "byte_order": "little",
//                    "base_hash": "<16 hex digits>" | null, "meta": {...},
//                    "arrays": [{"name", "shape", "offset"}, ...]}
//   remainder     float64 payload; "offset" is in bytes from its start
//
// A file whose arrays are all under "adapter/" and that carries a
// base_hash is a one-shot delta against that base checkpoint.
struct Checkpoint {
  std::map<std::string, Tensor> arrays;
  nlohmann::json meta = nlohmann::json::object();
  std::optional<std::uint64_t> base_hash;

  bool is_delta() const;
};

inline constexpr int kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters whose names satisfy `select` (all when empty).
Checkpoint checkpoint_from(const ParamStore& store,
                           const std::function<bool(const std::string&)>& select = {});
// Writes every array into `store`; arrays unknown to the store are added
// as frozen parameters.
void apply_checkpoint(const Checkpoint& ckpt, ParamStore& store);

std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(const std::string& s);

}  // namespace lab
