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

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/autodiff.hpp"
#include "lab/encoder.hpp"
#include "lab/params.hpp"
#include "lab/rng.hpp"
#include "lab/scene.hpp"
#include "lab/tensor.hpp"

namespace lab::theory {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // token sets are stored one sample per row

// 0.5 * sum |p_i - q_i|. Throws ContractError unless both are distributions (1e-9).
double tv_distance(std::span<const double> p, std::span<const double> q);

// Maps a pooled token to a distribution over joint action outcomes.
using PolicyFn = std::function<std::vector<double>(const Vec& z)>;

struct DiscretePolicyConfig {
  std::size_t width = 64;
  std::size_t hidden = 64;
  std::size_t action_dim = 2;
  std::size_t bins = 16;

  std::size_t outcomes() const;  // bins^action_dim
};

// Frozen input standardization, two-layer MLP on the mean-pooled token, and a
// factorized discrete head (horizon 1). The joint distribution is the product
// of per-dimension softmaxes.
class DiscretePolicy {
 public:
  DiscretePolicy(DiscretePolicyConfig cfg, Rng& rng);

  const DiscretePolicyConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Logits [B * action_dim, bins] for pooled tokens [B, width].
  ad::Var logits(ad::Tape& tape, ad::Var z) const;
  std::vector<double> marginals(const Vec& z) const;  // action_dim * bins
  std::vector<double> distribution(const Vec& z) const;
  PolicyFn fn() const;

  // Cross-entropy fit on binned actions [N, action_dim] in [-1, 1]. Returns the loss trace.
  std::vector<double> fit(const Mat& z, const Mat& actions, std::size_t steps, double peak_lr,
                          std::uint64_t seed);

 private:
  DiscretePolicyConfig cfg_;
  ParamStore store_;
};

struct LipschitzEstimate {
  double l_hat = 0.0;
  std::size_t pairs_used = 0;
  std::size_t pairs_skipped = 0;
  double max_tv = 0.0;
  double max_distance = 0.0;
  Vec max_z;
  Vec max_z_prime;
};

struct LipschitzOptions {
  std::size_t n_pairs = 2000;
  double perturbation = 1e-2;  // norm of the (z, z + delta) probes
  std::uint64_t seed = 0;
  // Optional anchor: every sample is also paired with it.
  std::optional<Vec> anchor;
};

LipschitzEstimate estimate_lipschitz(const PolicyFn& policy, const Mat& samples,
                                     const LipschitzOptions& opts = {});

inline constexpr double kBoundSlack = 0.05;

struct DriftBoundReport {
  double mean_tv = 0.0;
  double mean_drift = 0.0;
  double rms_drift = 0.0;
  double l_hat = 0.0;
  double rhs = 0.0;  // l_hat * mean_drift * (1 + slack)
  bool holds = false;
  double worst_violation = 0.0;  // max_i tv_i - l_hat * drift_i
  bool jensen_holds = false;     // mean drift <= rms drift
};

DriftBoundReport check_drift_bound(const PolicyFn& policy, const Mat& z_t, const Vec& z_star,
                                   double l_hat, double slack = kBoundSlack);

struct AffineCorrection {
  Mat m;
  Vec b;
  bool diagonal = false;

  Vec apply(const Vec& z) const { return m * z + b; }
  Mat apply_rows(const Mat& z) const;
};

struct AffineFit {
  AffineCorrection correction;
  double epsilon = 0.0;  // sqrt(mean ||M z_t + b - z_s||^2)
  bool regularized = false;
};

inline constexpr double kAffineRidge = 1e-9;

double affine_residual(const AffineCorrection& c, const Mat& z_t, const Mat& z_s);
AffineFit fit_affine_oracle(const Mat& z_t, const Mat& z_s, bool diagonal_only);

struct AffineRecoveryReport {
  AffineFit fit;
  double mean_tv = 0.0;
  double max_tv = 0.0;
  double l_hat = 0.0;
  double bound = 0.0;  // l_hat * epsilon * (1 + slack)
  bool holds = false;
  bool jensen_holds = false;
};

// Drifts z_s by z_t = M0 z_s + b0, fits a correction and compares the
// corrected policy with the source policy sample by sample.
AffineRecoveryReport verify_affine_recovery(const PolicyFn& policy, const Mat& z_s, const Mat& m0,
                                            const Vec& b0, double l_hat, bool diagonal_only = true,
                                            double slack = kBoundSlack);

struct FtmTrainResult {
  Vec gamma;
  Vec beta;
  double epsilon = 0.0;
  std::vector<double> loss_trace;
};

// Gradient-trained (1 + gamma) * z + beta on the same least-squares objective.
FtmTrainResult train_ftm_correction(const Mat& z_t, const Mat& z_s, std::size_t steps,
                                    double peak_lr = 1e-2);

struct SpectrumReport {
  std::vector<double> sigma;
  std::vector<double> tail_energy;  // index r: sum_{i>r} sigma_i^2, r = 0..d
  std::vector<std::size_t> ranks;
  std::vector<double> error_sq;     // measured ||dW - dW_r||_F^2 per rank
  double max_gap = 0.0;             // max |error_sq - tail_energy|
  std::size_t random_trials = 0;
  bool random_beaten = false;
};

SpectrumReport verify_eckart_young(const Tensor& delta_w, std::span<const std::size_t> ranks,
                                   std::size_t trials = 1000, std::uint64_t seed = 0);

// dW = U diag(sigma) V^T with Haar-random orthonormal factors.
Tensor planted_matrix(std::size_t rows, std::size_t cols, std::span<const double> sigma, Rng& rng);

struct WeightDriftScenario {
  std::string layer;
  Tensor w;
  Tensor w_target;
  std::vector<double> planted_sigma;
};

WeightDriftScenario make_weight_drift(const vision::EncoderConfig& enc, const std::string& layer,
                                      std::span<const double> sigma, std::uint64_t seed);

struct RankSweepRow {
  std::size_t rank = 0;
  double closed_form_error_sq = 0.0;
  double trained_error_sq = 0.0;
  std::size_t trainable_params = 0;
};

struct RankSweepOptions {
  std::size_t steps = 2000;
  double peak_lr = 1e-2;
  std::uint64_t seed = 0;
};

std::vector<RankSweepRow> fla_rank_sweep(const WeightDriftScenario& scenario,
                                         std::span<const std::size_t> ranks,
                                         const RankSweepOptions& opts = {});

struct DriftMetrics {
  double mean_to_mean_before = 0.0;
  double nn_before = 0.0;
  double mean_to_mean_after = 0.0;
  double nn_after = 0.0;
  double ratio = 0.0;  // after / before on the mean-to-mean distance
};

DriftMetrics embedding_drift_report(const Mat& z_s, const Mat& z_t,
                                    const std::optional<Mat>& z_t_adapted = std::nullopt);

// mean |x| <= sqrt(mean x^2) on the given sample.
bool jensen_holds(std::span<const double> values);

// Pooled tokens for a set of images under a frozen encoder, one row per image.
Mat pooled_tokens(const ParamStore& store, const vision::EncoderConfig& cfg,
                  std::span<const Image> images);

// Every visual token of every image, one row per token.
Mat patch_tokens(const ParamStore& store, const vision::EncoderConfig& cfg,
                 std::span<const Image> images);

struct OrbitScenarioConfig {
  vision::EncoderConfig encoder;
  scene::EnvConfig env;
  double theta_deg = 30.0;
  std::size_t source_samples = 384;
  std::size_t drift_samples = 128;
  std::size_t policy_steps = 1500;
  std::uint64_t seed = 0;
};

struct OrbitScenario {
  DiscretePolicy policy;
  Mat z_source;     // random layouts, default camera
  Mat z_drift;      // reference layout, jittered, orbited camera (evaluation half)
  Mat z_held_out;   // same distribution as z_drift, used for L_hat only
  Vec z_star;       // reference layout, default camera
  std::vector<double> policy_loss;
};

// Builds the orbit drift scenario around a frozen encoder held in `store`.
OrbitScenario make_orbit_scenario(const ParamStore& store, const OrbitScenarioConfig& cfg);

struct TheoryReport {
  std::string scenario;
  std::optional<DriftBoundReport> drift_bound;
  std::optional<LipschitzEstimate> lipschitz;
  std::optional<AffineRecoveryReport> affine;
  std::optional<SpectrumReport> spectrum;
  std::vector<RankSweepRow> rank_sweep;
  std::optional<DriftMetrics> drift_metrics;
  std::vector<std::string> notes;
};

nlohmann::json to_json(const TheoryReport& r);

}  // namespace lab::theory
