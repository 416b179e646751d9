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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lab/tensor.hpp"

namespace lab {

struct Param {
  Tensor value;
  bool trainable = true;
};

// Ordered registry of named parameters. Names are slash-separated paths such
// as "encoder/block0/attn/q/weight" or "adapter/ftm/gamma".
class ParamStore {
 public:
  void add(const std::string& name, Tensor value, bool trainable = true);
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Param& get(const std::string& name) const;
  Param& get(const std::string& name);
  const Tensor& value(const std::string& name) const { return get(name).value; }
  void erase_prefix(const std::string& prefix);

  const std::map<std::string, Param>& all() const { return params_; }
  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  std::size_t trainable_count() const;
  std::size_t total_count() const;

  // Marks exactly the parameters matching `keep` as trainable.
  void freeze_except(const std::function<bool(const std::string&)>& keep);
  void set_all_trainable(bool trainable);

  // content_hash of every parameter.
  std::map<std::string, std::uint64_t> hashes() const;
  // Hash over every selected name and value, in name order.
  std::uint64_t fingerprint(const std::function<bool(const std::string&)>& select = {}) const;

 private:
  std::map<std::string, Param> params_;
};

inline bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace lab
