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

#include "lab/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lab/error.hpp"

namespace lab::exp {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultsHeader << "\n";
  for (const auto& r : rows) {
    for (const std::string* f : {&r.cell_id, &r.adapter, &r.perturb, &r.severity}) {
      if (f->find_first_of(",\n\r") != std::string::npos) {
        throw ContractError("result field '" + *f + "' contains a CSV separator");
      }
    }
    std::ostringstream t;
    t << std::fixed << std::setprecision(3) << r.wall_time_s;
    out << r.cell_id << ',' << r.adapter << ',' << r.perturb << ',' << r.severity << ','
        << (r.failed() ? std::string("error") : shortest(r.success_rate)) << ','
        << r.trainable_params << ',' << r.adapt_steps << ',' << t.str() << "\n";
  }
}

void save_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write " + path.string());
  write_results_csv(out, rows);
}

std::vector<ResultRow> parse_results_csv(std::istream& in, const std::string& source) {
  std::vector<ResultRow> rows;
  std::string line;
  std::size_t n = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(source + ":" + std::to_string(n) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (n == 1) {
      if (line != kResultsHeader) fail("expected header '" + std::string(kResultsHeader) + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 8) fail("expected 8 fields, found " + std::to_string(f.size()));
    ResultRow r;
    r.cell_id = f[0];
    r.adapter = f[1];
    r.perturb = f[2];
    r.severity = f[3];
    if (r.cell_id.empty()) fail("empty cell_id");
    if (f[4] == "error") {
      r.error = "failed";
    } else if (!parse_number(f[4], r.success_rate) || !(r.success_rate >= 0.0) ||
               r.success_rate > 1.0) {
      fail("success_rate '" + f[4] + "' is not a number in [0, 1]");
    }
    if (!parse_number(f[5], r.trainable_params)) fail("trainable_params '" + f[5] + "' is not an integer");
    if (!parse_number(f[6], r.adapt_steps)) fail("adapt_steps '" + f[6] + "' is not an integer");
    if (!parse_number(f[7], r.wall_time_s) || !std::isfinite(r.wall_time_s) || r.wall_time_s < 0) {
      fail("wall_time_s '" + f[7] + "' is not a non-negative number");
    }
    rows.push_back(std::move(r));
  }
  if (n == 0) throw ParseError(source + ":1: empty file, expected the header");
  return rows;
}

std::vector<ResultRow> load_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_results_csv(in, path.string());
}

std::string benchmark_family(const std::string& perturb) {
  if (perturb == "camera_orbit" || perturb == "camera_discrete") return "camera";
  if (perturb == "lighting" || perturb == "texture" || perturb == "none") return perturb;
  for (auto f : scene::kAllNoise)
    if (scene::to_string(f) == perturb) return "noise";
  throw ParseError("unknown perturbation '" + perturb + "'");
}

Report summarize(const std::vector<ResultRow>& rows, const ReportOptions& opts) {
  Report rep;
  struct Acc {
    std::map<std::string, std::pair<double, std::size_t>> fam;
  };
  std::vector<Acc> acc;
  for (const auto& r : rows) {
    const std::string fam = benchmark_family(r.perturb);
    if (std::find(rep.families.begin(), rep.families.end(), fam) == rep.families.end()) {
      rep.families.push_back(fam);
    }
    auto it = std::find_if(rep.adapters.begin(), rep.adapters.end(),
                           [&](const AdapterSummary& a) { return a.adapter == r.adapter; });
    if (it == rep.adapters.end()) {
      AdapterSummary s;
      s.adapter = r.adapter;
      if (opts.params_encoder) {
        policy::ModelConfig m;
        m.encoder = *opts.params_encoder;
        s.trainable_params = adapters::count_trainable(adapters::AdapterKind::parse(r.adapter),
                                                       m.encoder, policy::expert_linear_layers(m));
      } else {
        s.trainable_params = r.trainable_params;
      }
      rep.adapters.push_back(s);
      acc.emplace_back();
      it = rep.adapters.end() - 1;
    }
    const std::size_t k = static_cast<std::size_t>(it - rep.adapters.begin());
    ++it->cells;
    if (r.failed()) {
      ++it->failed;
      continue;
    }
    auto& [sum, count] = acc[k].fam[fam];
    sum += r.success_rate;
    ++count;
  }
  for (std::size_t k = 0; k < rep.adapters.size(); ++k) {
    double total = 0.0;
    for (const auto& [fam, sc] : acc[k].fam) {
      const double m = sc.first / static_cast<double>(sc.second);
      rep.adapters[k].family_mean[fam] = m;
      total += m;
    }
    if (!acc[k].fam.empty()) rep.adapters[k].mean_success = total / static_cast<double>(acc[k].fam.size());
  }
  return rep;
}

std::string params_in_millions(std::size_t params) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << static_cast<double>(params) / 1e6 << "M";
  return os.str();
}

std::string render_report(const Report& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "success by family\n";
  os << std::left << std::setw(14) << "adapter";
  for (const auto& f : report.families) os << std::setw(10) << f;
  os << std::setw(10) << "mean" << "failed\n";
  for (const auto& a : report.adapters) {
    os << std::setw(14) << a.adapter;
    for (const auto& f : report.families) {
      const auto it = a.family_mean.find(f);
      if (it == a.family_mean.end()) {
        os << std::setw(10) << "-";
      } else {
        os << std::setw(10) << it->second;
      }
    }
    os << std::setw(10) << a.mean_success << a.failed << "\n";
  }
  os << "\nparams vs success\n";
  os << std::setw(14) << "adapter" << std::setw(14) << "params" << std::setw(10) << "params_M"
     << "mean_success\n";
  for (const auto& a : report.adapters) {
    os << std::setw(14) << a.adapter << std::setw(14) << a.trainable_params << std::setw(10)
       << params_in_millions(a.trainable_params) << a.mean_success << "\n";
  }
  return os.str();
}

nlohmann::json report_to_json(const Report& report) {
  nlohmann::json j;
  j["families"] = report.families;
  j["adapters"] = nlohmann::json::array();
  for (const auto& a : report.adapters) {
    j["adapters"].push_back({{"adapter", a.adapter},
                             {"cells", a.cells},
                             {"failed", a.failed},
                             {"family_mean", a.family_mean},
                             {"mean_success", a.mean_success},
                             {"trainable_params", a.trainable_params},
                             {"trainable_params_m", params_in_millions(a.trainable_params)}});
  }
  return j;
}

}  // namespace lab::exp
