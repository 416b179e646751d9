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

#include "lab/theory_runner.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "lab/error.hpp"

namespace lab::exp {

namespace {

using theory::Mat;
using theory::Vec;

constexpr double kPlantedSigma[] = {5, 4, 3, 2, 1, 0.5, 0.25, 0.1};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

ScenarioOutcome planted_spectrum(std::uint64_t seed) {
  ScenarioOutcome out{"planted-spectrum", {}, {}};
  Rng rng(seed);
  const std::size_t n = std::size(kPlantedSigma);
  const Tensor dw = theory::planted_matrix(n, n, kPlantedSigma, rng);
  std::vector<std::size_t> ranks(n + 1);
  std::iota(ranks.begin(), ranks.end(), std::size_t{0});
  theory::TheoryReport rep;
  rep.scenario = out.name;
  rep.spectrum = theory::verify_eckart_young(dw, ranks, 1000, rng.next_u64());
  const auto& s = *rep.spectrum;

  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(s.sigma[i] - kPlantedSigma[i]) > 1e-9) {
      out.failures.push_back("sigma[" + std::to_string(i) + "] = " + fmt(s.sigma[i]) +
                             ", planted " + fmt(kPlantedSigma[i]));
    }
  }
  if (s.max_gap > 1e-10) out.failures.push_back("Eckart-Young gap " + fmt(s.max_gap) + " > 1e-10");
  if (s.random_beaten) out.failures.push_back("a random rank-r matrix beat the truncated SVD");
  for (std::size_t r = 1; r < s.tail_energy.size(); ++r) {
    if (s.tail_energy[r] > s.tail_energy[r - 1]) {
      out.failures.push_back("tail energy increases at r = " + std::to_string(r));
    }
  }
  if (s.tail_energy.back() != 0.0) out.failures.push_back("tail energy at full rank is not 0");

  double tail3 = 0.0;
  for (std::size_t i = 3; i < n; ++i) tail3 += kPlantedSigma[i] * kPlantedSigma[i];
  rep.notes.push_back("planted tail energy at r = 3: " + fmt(tail3));
  out.report = theory::to_json(rep);
  out.report["planted_sigma"] = std::vector<double>(std::begin(kPlantedSigma), std::end(kPlantedSigma));
  out.report["tail_energy_r3"] = s.tail_energy[3];
  return out;
}

ScenarioOutcome identity_drift(const LabConfig& cfg, std::uint64_t seed) {
  ScenarioOutcome out{"identity-drift", {}, {}};
  Rng rng(seed);
  const std::size_t width = cfg.model.encoder.d_model;
  theory::DiscretePolicy policy({width}, rng);
  Mat z_s(128, static_cast<Eigen::Index>(width));
  for (Eigen::Index i = 0; i < z_s.size(); ++i) z_s.data()[i] = rng.gaussian();
  const Vec z_star = z_s.row(0).transpose();

  theory::LipschitzOptions lo;
  lo.seed = rng.next_u64();
  lo.anchor = z_star;
  const auto est = theory::estimate_lipschitz(policy.fn(), z_s, lo);

  const Mat m0 = Mat::Identity(z_s.cols(), z_s.cols());
  const Vec b0 = Vec::Zero(z_s.cols());
  const auto affine = theory::verify_affine_recovery(policy.fn(), z_s, m0, b0, est.l_hat);
  // The reference token observed without drift, once per sample.
  const Mat at_star = z_star.transpose().replicate(z_s.rows(), 1);
  const auto bound = theory::check_drift_bound(policy.fn(), at_star, z_star, est.l_hat);
  const auto drift = theory::embedding_drift_report(z_s, z_s);

  if (!affine.holds) out.failures.push_back("affine recovery bound does not hold");
  if (affine.max_tv >= 1e-6) out.failures.push_back("post-correction TV " + fmt(affine.max_tv) + " >= 1e-6");
  if (affine.fit.epsilon >= 1e-10) out.failures.push_back("epsilon " + fmt(affine.fit.epsilon) + " >= 1e-10");
  if (!affine.jensen_holds || !bound.jensen_holds) out.failures.push_back("Jensen check failed");
  if (!bound.holds || bound.mean_tv != 0.0 || bound.mean_drift != 0.0) {
    out.failures.push_back("drift bound is not trivially satisfied");
  }
  if (drift.mean_to_mean_before != 0.0 || drift.nn_before != 0.0) {
    out.failures.push_back("identity drift reports a non-zero distance");
  }

  theory::TheoryReport rep;
  rep.scenario = out.name;
  rep.lipschitz = est;
  rep.affine = affine;
  rep.drift_metrics = drift;
  out.report = theory::to_json(rep);
  out.report["drift_bound"] = {{"lhs", bound.mean_tv}, {"rhs", bound.rhs}, {"holds", bound.holds}};
  return out;
}

ScenarioOutcome orbit_30(const LabConfig& cfg, std::uint64_t seed, const ParamStore* encoder) {
  ScenarioOutcome out{"orbit-30", {}, {}};
  theory::OrbitScenarioConfig oc;
  oc.encoder = cfg.model.encoder;
  oc.env = cfg.env;
  oc.theta_deg = 30.0;
  oc.seed = seed;
  ParamStore fresh;
  if (!encoder) {
    Rng init(Rng(seed).fork(0).next_u64());
    vision::init_encoder(fresh, oc.encoder, init);
    encoder = &fresh;
  }
  const theory::OrbitScenario sc = theory::make_orbit_scenario(*encoder, oc);

  // L_hat covers the source region, the held-out drifted tokens and pairs
  // with the reference token; it says nothing outside them.
  Mat pool(sc.z_source.rows() + sc.z_held_out.rows(), sc.z_source.cols());
  pool << sc.z_source, sc.z_held_out;
  theory::LipschitzOptions lo;
  lo.seed = Rng(seed).fork(1).next_u64();
  lo.anchor = sc.z_star;
  const auto est = theory::estimate_lipschitz(sc.policy.fn(), pool, lo);
  const auto bound = theory::check_drift_bound(sc.policy.fn(), sc.z_drift, sc.z_star, est.l_hat);

  const Mat target = sc.z_star.transpose().replicate(sc.z_drift.rows(), 1);
  const auto fit = theory::fit_affine_oracle(sc.z_drift, target, true);
  const Mat adapted = fit.correction.apply_rows(sc.z_drift);
  const Mat star_row = sc.z_star.transpose();
  const auto drift = theory::embedding_drift_report(star_row, sc.z_drift, adapted);

  if (!bound.jensen_holds) out.failures.push_back("Jensen check failed");

  theory::TheoryReport rep;
  rep.scenario = out.name;
  rep.drift_bound = bound;
  rep.lipschitz = est;
  rep.drift_metrics = drift;
  rep.notes.push_back("L_hat is an empirical maximum over the sampled source and drifted tokens");
  if (!bound.holds) rep.notes.push_back("bound violated: the policy is not L_hat-Lipschitz over the drifted region");
  out.report = theory::to_json(rep);
  out.report["epsilon"] = fit.epsilon;
  out.report["policy_loss"] = {{"first", sc.policy_loss.front()}, {"last", sc.policy_loss.back()}};
  out.report["encoder"] = encoder == &fresh ? "initialised" : "pretrained";
  return out;
}

}  // namespace

std::vector<std::string> theory_scenario_names() {
  return {"planted-spectrum", "identity-drift", "orbit-30"};
}

ScenarioOutcome run_theory_scenario(const std::string& name, const LabConfig& cfg,
                                    std::uint64_t seed, const ParamStore* encoder) {
  ScenarioOutcome out;
  if (name == "planted-spectrum") {
    out = planted_spectrum(seed);
  } else if (name == "identity-drift") {
    out = identity_drift(cfg, seed);
  } else if (name == "orbit-30") {
    out = orbit_30(cfg, seed, encoder);
  } else {
    throw ParseError("unknown theory scenario '" + name + "'");
  }
  out.report["hard_failures"] = out.failures;
  out.report["ok"] = out.ok();
  return out;
}

}  // namespace lab::exp
