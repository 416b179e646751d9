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

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/experiment.hpp"

namespace lab::exp {

inline constexpr const char* kResultsHeader =
    "cell_id,adapter,perturb,severity,success_rate,trainable_params,adapt_steps,wall_time_s";

// success_rate is written in shortest round-trip form, or "error" for a
// failed cell; wall_time_s with millisecond resolution.
void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
void save_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

// Throws ParseError "<source>:<line>: ..." on the first malformed line.
std::vector<ResultRow> parse_results_csv(std::istream& in, const std::string& source = "csv");
std::vector<ResultRow> load_results_csv(const std::filesystem::path& path);

// Benchmark family of a perturb column: camera (orbit and discrete poses),
// lighting, texture, noise (all five corruptions) or none.
std::string benchmark_family(const std::string& perturb);

struct AdapterSummary {
  std::string adapter;
  std::size_t cells = 0;
  std::size_t failed = 0;
  std::map<std::string, double> family_mean;
  // Mean of the family means.
  double mean_success = 0.0;
  std::size_t trainable_params = 0;
};

struct ReportOptions {
  // Recount trainable parameters for this encoder instead of reading the
  // CSV column (e.g. d_model = 2048 for the paper-scale rendering).
  std::optional<vision::EncoderConfig> params_encoder;
};

struct Report {
  std::vector<std::string> families;
  std::vector<AdapterSummary> adapters;  // in first-appearance order
};

Report summarize(const std::vector<ResultRow>& rows, const ReportOptions& opts = {});
std::string render_report(const Report& report);
nlohmann::json report_to_json(const Report& report);

// 4096 -> "0.004M".
std::string params_in_millions(std::size_t params);

}  // namespace lab::exp
