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
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/experiment.hpp"
#include "lab/theory.hpp"

namespace lab::exp {

struct ScenarioOutcome {
  std::string name;
  nlohmann::json report;
  // Hard assertions that failed (Eckart-Young, affine recovery, statistics
  // sanity). The orbit drift bound is a diagnostic and never lands here.
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};

// "planted-spectrum", "identity-drift", "orbit-30".
std::vector<std::string> theory_scenario_names();

// `encoder` supplies the frozen encoder for orbit-30; when null a fresh
// encoder is initialised from the seed.
ScenarioOutcome run_theory_scenario(const std::string& name, const LabConfig& cfg,
                                    std::uint64_t seed, const ParamStore* encoder = nullptr);

}  // namespace lab::exp
