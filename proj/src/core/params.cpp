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

#include "lab/params.hpp"

#include "lab/error.hpp"

namespace lab {

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (params_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  params_.emplace(name, Param{std::move(value), trainable});
}

void ParamStore::set(const std::string& name, Tensor value) {
  Param& p = get(name);
  if (p.value.shape() != value.shape()) {
    throw ShapeError("parameter '" + name + "' expects shape " + to_string(p.value.shape()) +
                     ", got " + to_string(value.shape()));
  }
  p.value = std::move(value);
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Param& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::erase_prefix(const std::string& prefix) {
  for (auto it = params_.begin(); it != params_.end();) {
    if (starts_with(it->first, prefix)) {
      it = params_.erase(it);
    } else {
      ++it;
    }
  }
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params_)
    if (p.trainable) out.push_back(name);
  return out;
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

std::size_t ParamStore::total_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

void ParamStore::freeze_except(const std::function<bool(const std::string&)>& keep) {
  for (auto& [name, p] : params_) p.trainable = keep(name);
}

void ParamStore::set_all_trainable(bool trainable) {
  for (auto& [name, p] : params_) p.trainable = trainable;
}

std::map<std::string, std::uint64_t> ParamStore::hashes() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [name, p] : params_) out.emplace(name, content_hash(p.value));
  return out;
}

std::uint64_t ParamStore::fingerprint(const std::function<bool(const std::string&)>& select) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : params_) {
    if (select && !select(name)) continue;
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= content_hash(p.value);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace lab
