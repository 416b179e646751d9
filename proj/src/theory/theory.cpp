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

#include "lab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lab/adapters.hpp"
#include "lab/error.hpp"
#include "lab/flow.hpp"
#include "lab/nn.hpp"
#include "lab/svd.hpp"
#include "lab/trainer.hpp"

namespace lab::theory {

namespace {

constexpr double kGeluC = 0.7978845608028654;
constexpr double kGeluK = 0.044715;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> as_matrix(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1))};
}

Tensor to_tensor(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMat>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

Mat to_mat(const Tensor& t) { return as_matrix(t); }

void check_distribution(std::span<const double> p, const char* which) {
  if (p.empty()) throw ContractError(std::string("tv_distance: ") + which + " is empty");
  double s = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ContractError(std::string("tv_distance: ") + which + " has a negative or non-finite entry");
    }
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) {
    throw ContractError(std::string("tv_distance: ") + which + " sums to " + std::to_string(s));
  }
}

train::TrainOptions options(std::size_t steps, double peak_lr) {
  train::TrainOptions o;
  o.steps = steps;
  o.schedule = {std::max<std::size_t>(1, steps / 20), steps, peak_lr, peak_lr * 1e-3};
  o.clip_norm = 1.0;
  o.divergence_window = steps + 1;
  return o;
}

}  // namespace

double tv_distance(std::span<const double> p, std::span<const double> q) {
  check_distribution(p, "p");
  check_distribution(q, "q");
  if (p.size() != q.size()) throw ContractError("tv_distance: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return std::min(1.0, 0.5 * s);
}

std::size_t DiscretePolicyConfig::outcomes() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < action_dim; ++i) n *= bins;
  return n;
}

DiscretePolicy::DiscretePolicy(DiscretePolicyConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.width == 0 || cfg_.hidden == 0 || cfg_.action_dim == 0 || cfg_.bins < 2) {
    throw ContractError("DiscretePolicy: degenerate config");
  }
  store_.add("theory/in_scale", Tensor({cfg_.width}, 1.0), false);
  store_.add("theory/in_shift", Tensor({cfg_.width}), false);
  nn::init_linear(store_, {"theory/fc1", cfg_.width, cfg_.hidden}, rng,
                  1.0 / std::sqrt(static_cast<double>(cfg_.width)));
  nn::init_linear(store_, {"theory/fc2", cfg_.hidden, cfg_.action_dim * cfg_.bins}, rng,
                  0.5 / std::sqrt(static_cast<double>(cfg_.hidden)));
}

ad::Var DiscretePolicy::logits(ad::Tape& tape, ad::Var z) const {
  const std::size_t b = z.shape().at(0);
  z = ad::add_bcast(ad::mul_bcast(z, tape.param(store_, "theory/in_scale")),
                    tape.param(store_, "theory/in_shift"));
  ad::Var h = ad::gelu(nn::linear(tape, store_, "theory/fc1", z));
  ad::Var out = nn::linear(tape, store_, "theory/fc2", h);
  return ad::reshape(out, {b * cfg_.action_dim, cfg_.bins});
}

std::vector<double> DiscretePolicy::marginals(const Vec& z) const {
  if (static_cast<std::size_t>(z.size()) != cfg_.width) throw ShapeError("DiscretePolicy: token width");
  const auto w1 = as_matrix(store_.value("theory/fc1/weight"));
  const auto w2 = as_matrix(store_.value("theory/fc2/weight"));
  const auto& b1 = store_.value("theory/fc1/bias");
  const auto& b2 = store_.value("theory/fc2/bias");
  const auto& scale = store_.value("theory/in_scale");
  const auto& shift = store_.value("theory/in_shift");
  Vec zn(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    zn[i] = z[i] * scale[static_cast<std::size_t>(i)] + shift[static_cast<std::size_t>(i)];
  }
  Vec h = w1 * zn;
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    const double x = h[i] + b1[static_cast<std::size_t>(i)];
    h[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x)));
  }
  const Vec logits = w2 * h;
  std::vector<double> out(cfg_.action_dim * cfg_.bins);
  for (std::size_t d = 0; d < cfg_.action_dim; ++d) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cfg_.bins; ++k) {
      const std::size_t i = d * cfg_.bins + k;
      out[i] = logits[static_cast<Eigen::Index>(i)] + b2[i];
      mx = std::max(mx, out[i]);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < cfg_.bins; ++k) s += (out[d * cfg_.bins + k] = std::exp(out[d * cfg_.bins + k] - mx));
    for (std::size_t k = 0; k < cfg_.bins; ++k) out[d * cfg_.bins + k] /= s;
  }
  return out;
}

std::vector<double> DiscretePolicy::distribution(const Vec& z) const {
  const auto m = marginals(z);
  std::vector<double> joint{1.0};
  for (std::size_t d = 0; d < cfg_.action_dim; ++d) {
    std::vector<double> next;
    next.reserve(joint.size() * cfg_.bins);
    for (double p : joint)
      for (std::size_t k = 0; k < cfg_.bins; ++k) next.push_back(p * m[d * cfg_.bins + k]);
    joint = std::move(next);
  }
  return joint;
}

PolicyFn DiscretePolicy::fn() const {
  return [this](const Vec& z) { return distribution(z); };
}

std::vector<double> DiscretePolicy::fit(const Mat& z, const Mat& actions, std::size_t steps,
                                        double peak_lr, std::uint64_t seed) {
  if (z.rows() != actions.rows() || static_cast<std::size_t>(actions.cols()) != cfg_.action_dim) {
    throw ShapeError("DiscretePolicy::fit: data shapes");
  }
  (void)seed;  // full-batch, no sampling
  // Frozen input standardization from the training set.
  Tensor scale({cfg_.width}), shift({cfg_.width});
  for (std::size_t j = 0; j < cfg_.width; ++j) {
    const auto col = z.col(static_cast<Eigen::Index>(j));
    const double mu = col.mean();
    const double sd = std::sqrt((col.array() - mu).square().mean());
    scale[j] = 1.0 / std::max(sd, 1e-6);
    shift[j] = -mu * scale[j];
  }
  store_.set("theory/in_scale", scale);
  store_.set("theory/in_shift", shift);
  const Tensor zt = to_tensor(z);
  std::vector<std::size_t> targets;
  for (Eigen::Index i = 0; i < actions.rows(); ++i)
    for (Eigen::Index d = 0; d < actions.cols(); ++d)
      targets.push_back(policy::action_to_bin(actions(i, d), cfg_.bins));
  auto loss = [&](ad::Tape& tape, const ParamStore&, std::size_t) {
    return ad::cross_entropy(logits(tape, tape.constant(zt)), targets);
  };
  return train::train_loop(store_, loss, options(steps, peak_lr));
}

LipschitzEstimate estimate_lipschitz(const PolicyFn& policy, const Mat& samples,
                                     const LipschitzOptions& opts) {
  const Eigen::Index n = samples.rows();
  bool distinct = false;
  for (Eigen::Index i = 1; i < n && !distinct; ++i) distinct = (samples.row(i) - samples.row(0)).norm() >= 1e-12;
  if (!distinct) throw ContractError("estimate_lipschitz needs at least two distinct samples");

  std::vector<std::vector<double>> dist(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = policy(samples.row(i).transpose());

  LipschitzEstimate est;
  auto consider = [&](const Vec& a, const std::vector<double>& pa, const Vec& b,
                      const std::vector<double>& pb) {
    const double d = (a - b).norm();
    if (d < 1e-12) {
      ++est.pairs_skipped;
      return;
    }
    ++est.pairs_used;
    const double tv = tv_distance(pa, pb);
    if (tv / d > est.l_hat) {
      est.l_hat = tv / d;
      est.max_tv = tv;
      est.max_distance = d;
      est.max_z = a;
      est.max_z_prime = b;
    }
  };

  // Exhaustive when affordable so a superset of samples yields a superset of pairs.
  const auto nu = static_cast<std::size_t>(n);
  if (nu * (nu - 1) / 2 <= opts.n_pairs) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j)
        consider(samples.row(i).transpose(), dist[static_cast<std::size_t>(i)], samples.row(j).transpose(),
                 dist[static_cast<std::size_t>(j)]);
  } else {
    Rng rng(opts.seed);
    for (std::size_t k = 0; k < opts.n_pairs; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.below(nu));
      const auto j = static_cast<Eigen::Index>(rng.below(nu));
      consider(samples.row(i).transpose(), dist[static_cast<std::size_t>(i)], samples.row(j).transpose(),
               dist[static_cast<std::size_t>(j)]);
    }
  }
  const Rng base(opts.seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng = base.fork(static_cast<std::uint64_t>(i));
    const Vec z = samples.row(i).transpose();
    Vec delta(z.size());
    for (Eigen::Index c = 0; c < z.size(); ++c) delta[c] = rng.gaussian();
    const Vec zp = z + opts.perturbation * delta / delta.norm();
    consider(z, dist[static_cast<std::size_t>(i)], zp, policy(zp));
  }
  if (opts.anchor) {
    const auto pa = policy(*opts.anchor);
    for (Eigen::Index i = 0; i < n; ++i)
      consider(samples.row(i).transpose(), dist[static_cast<std::size_t>(i)], *opts.anchor, pa);
  }
  return est;
}

bool jensen_holds(std::span<const double> values) {
  if (values.empty()) return true;
  double m1 = 0.0, m2 = 0.0;
  for (double v : values) {
    m1 += std::abs(v);
    m2 += v * v;
  }
  const double n = static_cast<double>(values.size());
  return m1 / n <= std::sqrt(m2 / n) * (1.0 + 1e-12);
}

DriftBoundReport check_drift_bound(const PolicyFn& policy, const Mat& z_t, const Vec& z_star,
                                   double l_hat, double slack) {
  if (z_t.rows() == 0) throw ContractError("check_drift_bound: empty token set");
  const auto p_star = policy(z_star);
  DriftBoundReport r;
  r.l_hat = l_hat;
  r.worst_violation = -std::numeric_limits<double>::infinity();
  std::vector<double> drifts;
  double sq = 0.0;
  for (Eigen::Index i = 0; i < z_t.rows(); ++i) {
    const Vec z = z_t.row(i).transpose();
    const double tv = tv_distance(policy(z), p_star);
    const double d = (z - z_star).norm();
    r.mean_tv += tv;
    r.mean_drift += d;
    sq += d * d;
    drifts.push_back(d);
    r.worst_violation = std::max(r.worst_violation, tv - l_hat * d);
  }
  const double n = static_cast<double>(z_t.rows());
  r.mean_tv /= n;
  r.mean_drift /= n;
  r.rms_drift = std::sqrt(sq / n);
  r.rhs = l_hat * r.mean_drift * (1.0 + slack);
  r.holds = r.mean_tv <= r.rhs;
  r.jensen_holds = jensen_holds(drifts);
  return r;
}

Mat AffineCorrection::apply_rows(const Mat& z) const {
  return (z * m.transpose()).rowwise() + b.transpose();
}

double affine_residual(const AffineCorrection& c, const Mat& z_t, const Mat& z_s) {
  if (z_t.rows() == 0) return 0.0;
  return std::sqrt((c.apply_rows(z_t) - z_s).rowwise().squaredNorm().mean());
}

AffineFit fit_affine_oracle(const Mat& z_t, const Mat& z_s, bool diagonal_only) {
  if (z_t.rows() != z_s.rows() || z_t.rows() == 0) throw ContractError("fit_affine_oracle: sample counts differ");
  if (!z_t.allFinite() || !z_s.allFinite()) throw NumericError("fit_affine_oracle: non-finite tokens");
  const Eigen::Index n = z_t.rows(), d = z_t.cols();
  AffineFit fit;
  AffineCorrection& c = fit.correction;
  c.diagonal = diagonal_only;
  if (diagonal_only) {
    if (z_s.cols() != d) throw ShapeError("fit_affine_oracle: diagonal mode needs equal widths");
    c.m = Mat::Zero(d, d);
    c.b = Vec::Zero(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double mx = z_t.col(j).mean(), my = z_s.col(j).mean();
      const Vec dx = z_t.col(j).array() - mx, dy = z_s.col(j).array() - my;
      double var = dx.squaredNorm() / static_cast<double>(n);
      const double cov = dx.dot(dy) / static_cast<double>(n);
      if (var <= kAffineRidge) {
        var += kAffineRidge;
        fit.regularized = true;
      }
      c.m(j, j) = cov / var;
      c.b[j] = my - c.m(j, j) * mx;
    }
  } else {
    Mat x(n, d + 1);
    x << z_t, Vec::Ones(n);
    Mat g = x.transpose() * x;
    Eigen::LDLT<Mat> ldlt(g);
    // rcond() misses exact zero pivots, so look at the pivots directly.
    const Vec piv = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || piv.minCoeff() <= 1e-13 * piv.maxCoeff() ||
        ldlt.rcond() < 1e-13) {
      g.diagonal().array() += kAffineRidge;
      ldlt.compute(g);
      fit.regularized = true;
    }
    const Mat w = ldlt.solve(x.transpose() * z_s);  // (d+1) x d_s
    c.m = w.topRows(d).transpose();
    c.b = w.row(d).transpose();
  }
  fit.epsilon = affine_residual(c, z_t, z_s);
  return fit;
}

AffineRecoveryReport verify_affine_recovery(const PolicyFn& policy, const Mat& z_s, const Mat& m0,
                                            const Vec& b0, double l_hat, bool diagonal_only,
                                            double slack) {
  const Mat z_t = (z_s * m0.transpose()).rowwise() + b0.transpose();
  AffineRecoveryReport r;
  r.fit = fit_affine_oracle(z_t, z_s, diagonal_only);
  r.l_hat = l_hat;
  const Mat corrected = r.fit.correction.apply_rows(z_t);
  std::vector<double> residuals;
  for (Eigen::Index i = 0; i < z_s.rows(); ++i) {
    const double tv = tv_distance(policy(corrected.row(i).transpose()), policy(z_s.row(i).transpose()));
    r.mean_tv += tv;
    r.max_tv = std::max(r.max_tv, tv);
    residuals.push_back((corrected.row(i) - z_s.row(i)).norm());
  }
  r.mean_tv /= static_cast<double>(z_s.rows());
  r.bound = l_hat * r.fit.epsilon * (1.0 + slack);
  // Jensen: mean residual norm <= epsilon, so this also bounds l_hat * E||.||.
  r.holds = r.mean_tv <= r.bound;
  r.jensen_holds = jensen_holds(residuals);
  return r;
}

FtmTrainResult train_ftm_correction(const Mat& z_t, const Mat& z_s, std::size_t steps,
                                    double peak_lr) {
  if (z_t.rows() != z_s.rows() || z_t.cols() != z_s.cols()) throw ShapeError("train_ftm_correction: shapes");
  ParamStore store;
  adapters::attach_ftm(store, static_cast<std::size_t>(z_t.cols()));
  const Tensor xt = to_tensor(z_t), yt = to_tensor(z_s);
  auto loss = [&](ad::Tape& tape, const ParamStore& s, std::size_t) {
    ad::Var y = adapters::apply_ftm(tape.constant(xt), tape.param(s, "adapter/ftm/gamma"),
                                    tape.param(s, "adapter/ftm/beta"));
    return ad::mse(y, tape.constant(yt));
  };
  FtmTrainResult out;
  out.loss_trace = train::train_loop(store, loss, options(steps, peak_lr));
  const auto ftm = adapters::read_ftm(store);
  out.gamma = Eigen::Map<const Vec>(ftm.gamma.data().data(), z_t.cols());
  out.beta = Eigen::Map<const Vec>(ftm.beta.data().data(), z_t.cols());
  AffineCorrection c{Mat((out.gamma.array() + 1.0).matrix().asDiagonal()), out.beta, true};
  out.epsilon = affine_residual(c, z_t, z_s);
  return out;
}

SpectrumReport verify_eckart_young(const Tensor& delta_w, std::span<const std::size_t> ranks,
                                   std::size_t trials, std::uint64_t seed) {
  delta_w.check_finite("verify_eckart_young");
  const Svd s = svd(delta_w);
  SpectrumReport rep;
  rep.sigma = s.sigma;
  const std::size_t k = s.sigma.size();
  rep.tail_energy.assign(k + 1, 0.0);
  for (std::size_t r = k; r-- > 0;) rep.tail_energy[r] = rep.tail_energy[r + 1] + s.sigma[r] * s.sigma[r];
  const Mat target = to_mat(delta_w);
  for (std::size_t r : ranks) {
    if (r > k) throw ContractError("verify_eckart_young: rank " + std::to_string(r) + " exceeds " + std::to_string(k));
    const double e = (target - to_mat(truncate(s, r))).squaredNorm();
    rep.ranks.push_back(r);
    rep.error_sq.push_back(e);
    rep.max_gap = std::max(rep.max_gap, std::abs(e - rep.tail_energy[r]));
  }

  // Competitors: scaled random rank-r products and perturbed truncations.
  Rng rng(seed);
  const Mat u = to_mat(s.u), v = to_mat(s.v);
  const auto rows = target.rows(), cols = target.cols();
  auto gaussian = [&](Eigen::Index a, Eigen::Index b) {
    Mat g(a, b);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.gaussian();
    return g;
  };
  std::vector<std::size_t> usable;
  for (std::size_t r : ranks)
    if (r > 0) usable.push_back(r);
  for (std::size_t t = 0; t < trials && !usable.empty(); ++t) {
    const auto r = static_cast<Eigen::Index>(usable[t % usable.size()]);
    Mat cand;
    if (t % 2 == 0) {
      cand = gaussian(rows, r) * gaussian(r, cols);
      const double denom = cand.squaredNorm();
      if (denom > 0.0) cand *= (cand.cwiseProduct(target).sum() / denom);
    } else {
      Mat ur = u.leftCols(r) + 1e-3 * gaussian(rows, r);
      Mat vr = v.leftCols(r) + 1e-3 * gaussian(cols, r);
      Vec sr(r);
      for (Eigen::Index i = 0; i < r; ++i) sr[i] = s.sigma[static_cast<std::size_t>(i)];
      cand = ur * sr.asDiagonal() * vr.transpose();
    }
    const double e = (target - cand).squaredNorm();
    ++rep.random_trials;
    if (e < rep.tail_energy[static_cast<std::size_t>(r)] - 1e-12 * (1.0 + rep.tail_energy[static_cast<std::size_t>(r)])) {
      rep.random_beaten = true;
    }
  }
  return rep;
}

Tensor planted_matrix(std::size_t rows, std::size_t cols, std::span<const double> sigma, Rng& rng) {
  const auto k = static_cast<Eigen::Index>(sigma.size());
  if (sigma.size() > std::min(rows, cols)) throw ContractError("planted_matrix: spectrum longer than min(rows, cols)");
  auto orthonormal = [&](std::size_t n) {
    Mat g(static_cast<Eigen::Index>(n), k);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.gaussian();
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(static_cast<Eigen::Index>(n), k);
    const Mat r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < k; ++i)
      if (r(i, i) < 0) q.col(i) *= -1.0;
    return q;
  };
  const Mat u = orthonormal(rows), v = orthonormal(cols);
  Vec s(k);
  for (Eigen::Index i = 0; i < k; ++i) s[i] = sigma[static_cast<std::size_t>(i)];
  return to_tensor(u * s.asDiagonal() * v.transpose());
}

WeightDriftScenario make_weight_drift(const vision::EncoderConfig& enc, const std::string& layer,
                                      std::span<const double> sigma, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  vision::init_encoder(store, enc, rng);
  const std::string name = layer + "/weight";
  if (!store.contains(name)) throw ContractError("make_weight_drift: unknown layer '" + layer + "'");
  WeightDriftScenario sc;
  sc.layer = layer;
  sc.w = store.value(name);
  sc.w_target = sc.w + planted_matrix(sc.w.dim(0), sc.w.dim(1), sigma, rng);
  sc.planted_sigma.assign(sigma.begin(), sigma.end());
  return sc;
}

std::vector<RankSweepRow> fla_rank_sweep(const WeightDriftScenario& sc, std::span<const std::size_t> ranks,
                                         const RankSweepOptions& opts) {
  const Tensor delta = sc.w_target - sc.w;
  const Svd s = svd(delta);
  std::vector<RankSweepRow> rows;
  for (std::size_t r : ranks) {
    RankSweepRow row;
    row.rank = r;
    row.closed_form_error_sq = (to_mat(delta) - to_mat(truncate(s, std::min(r, s.sigma.size())))).squaredNorm();

    ParamStore store;
    store.add(sc.layer + "/weight", sc.w, false);
    Rng rng(opts.seed + r);
    const nn::LinearSpec spec{sc.layer, sc.w.dim(1), sc.w.dim(0)};
    adapters::attach_lora(store, std::span<const nn::LinearSpec>(&spec, 1), r, rng);
    row.trainable_params = store.trainable_count();
    auto loss = [&](ad::Tape& tape, const ParamStore& st, std::size_t) {
      ad::Var diff = ad::sub(nn::effective_weight(tape, st, sc.layer), tape.constant(sc.w_target));
      return ad::sum(ad::square(diff));
    };
    train::train_loop(store, loss, options(opts.steps, opts.peak_lr));
    const auto lora = adapters::read_lora(store);
    const Tensor w_eff = adapters::effective_weight(lora.at(0), sc.w);
    row.trained_error_sq = (to_mat(w_eff) - to_mat(sc.w_target)).squaredNorm();
    rows.push_back(row);
  }
  return rows;
}

DriftMetrics embedding_drift_report(const Mat& z_s, const Mat& z_t, const std::optional<Mat>& z_t_adapted) {
  if (z_s.rows() == 0 || z_t.rows() == 0) throw ContractError("embedding_drift_report: empty token set");
  const Vec mu_s = z_s.colwise().mean().transpose();
  auto mean_to_mean = [&](const Mat& z) { return (Vec(z.colwise().mean().transpose()) - mu_s).norm(); };
  auto nearest = [&](const Mat& z) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      total += std::sqrt((z_s.rowwise() - z.row(i)).rowwise().squaredNorm().minCoeff());
    return total / static_cast<double>(z.rows());
  };
  DriftMetrics m;
  m.mean_to_mean_before = mean_to_mean(z_t);
  m.nn_before = nearest(z_t);
  const Mat& after = z_t_adapted ? *z_t_adapted : z_t;
  m.mean_to_mean_after = mean_to_mean(after);
  m.nn_after = nearest(after);
  if (m.mean_to_mean_before > 0.0) {
    m.ratio = m.mean_to_mean_after / m.mean_to_mean_before;
  } else {
    m.ratio = m.mean_to_mean_after > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return m;
}

Mat pooled_tokens(const ParamStore& store, const vision::EncoderConfig& cfg, std::span<const Image> images) {
  Mat out(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(cfg.d_model));
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - start);
    ad::Tape tape;
    const Tensor tok = vision::encode_batch(tape, store, cfg, images.subspan(start, n)).value();
    const std::size_t len = cfg.num_patches(), d = cfg.d_model;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < len; ++t) s += tok[(b * len + t) * d + j];
        out(static_cast<Eigen::Index>(start + b), static_cast<Eigen::Index>(j)) = s / static_cast<double>(len);
      }
  }
  return out;
}

Mat patch_tokens(const ParamStore& store, const vision::EncoderConfig& cfg, std::span<const Image> images) {
  const auto len = static_cast<Eigen::Index>(cfg.num_patches());
  Mat out(static_cast<Eigen::Index>(images.size()) * len, static_cast<Eigen::Index>(cfg.d_model));
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - start);
    ad::Tape tape;
    const Tensor tok = vision::encode_batch(tape, store, cfg, images.subspan(start, n)).value();
    out.middleRows(static_cast<Eigen::Index>(start) * len, static_cast<Eigen::Index>(n) * len) =
        Eigen::Map<const RowMat>(tok.data().data(), static_cast<Eigen::Index>(n) * len,
                                 static_cast<Eigen::Index>(cfg.d_model));
  }
  return out;
}

OrbitScenario make_orbit_scenario(const ParamStore& store, const OrbitScenarioConfig& cfg) {
  Rng rng(cfg.seed);
  const std::size_t px = cfg.encoder.image_size;
  const scene::CameraPose cam = scene::default_camera();

  std::vector<Image> source;
  Mat actions(static_cast<Eigen::Index>(cfg.source_samples), 2);
  for (std::size_t i = 0; i < cfg.source_samples; ++i) {
    const scene::EpisodeSpec ep = scene::sample_random_episode(rng);
    source.push_back(scene::render(ep.scene, cam, px));
    actions.row(static_cast<Eigen::Index>(i)) =
        scene::expert_action(scene::Vec2::Zero(), ep.scene.target_position, cfg.env).transpose();
  }

  const scene::CellLayout layout = scene::sample_cell_layout(rng);
  const Image reference = scene::render(scene::make_scene(layout.red, layout.blue, layout.task), cam, px);
  scene::EnvConfig env = cfg.env;
  env.image_size = px;
  const scene::Observer drifted(env, scene::CameraOrbit{cfg.theta_deg * std::numbers::pi / 180.0});
  std::vector<Image> eval, held;
  for (std::size_t i = 0; i < 2 * cfg.drift_samples; ++i) {
    const scene::EpisodeSpec ep = scene::sample_cell_episode(layout, rng);
    (i % 2 == 0 ? eval : held).push_back(drifted.observe(ep.scene));
  }

  Rng init(cfg.seed ^ 0x7468656f7279ULL);
  OrbitScenario sc{DiscretePolicy({cfg.encoder.d_model}, init), {}, {}, {}, {}, {}};
  sc.z_source = pooled_tokens(store, cfg.encoder, source);
  sc.z_drift = pooled_tokens(store, cfg.encoder, eval);
  sc.z_held_out = pooled_tokens(store, cfg.encoder, held);
  sc.z_star = pooled_tokens(store, cfg.encoder, std::span<const Image>(&reference, 1)).row(0).transpose();
  sc.policy_loss = sc.policy.fit(sc.z_source, actions, cfg.policy_steps, 3e-3, cfg.seed);
  return sc;
}

namespace {
nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
}  // namespace

nlohmann::json to_json(const TheoryReport& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  if (r.drift_bound) {
    const auto& d = *r.drift_bound;
    j["bounds"] = {{"lhs", d.mean_tv},       {"rhs", d.rhs},
                   {"holds", d.holds},       {"mean_drift", d.mean_drift},
                   {"rms_drift", d.rms_drift}, {"worst_violation", d.worst_violation},
                   {"jensen_holds", d.jensen_holds}, {"slack", kBoundSlack}};
    j["L_hat"] = d.l_hat;
  }
  if (r.lipschitz) {
    j["L_hat"] = r.lipschitz->l_hat;
    j["lipschitz"] = {{"pairs_used", r.lipschitz->pairs_used},
                      {"pairs_skipped", r.lipschitz->pairs_skipped},
                      {"max_tv", r.lipschitz->max_tv},
                      {"max_distance", r.lipschitz->max_distance}};
  }
  if (r.affine) {
    const auto& a = *r.affine;
    j["epsilon"] = a.fit.epsilon;
    j["bounds"] = {{"lhs", a.mean_tv}, {"rhs", a.bound}, {"holds", a.holds}, {"max_tv", a.max_tv},
                   {"jensen_holds", a.jensen_holds}, {"slack", kBoundSlack}};
    j["L_hat"] = a.l_hat;
    j["affine"] = {{"diagonal", a.fit.correction.diagonal},
                   {"regularized", a.fit.regularized},
                   {"b", vec_json(a.fit.correction.b)},
                   {"m_diagonal", vec_json(a.fit.correction.m.diagonal())}};
  }
  if (r.spectrum) {
    j["spectrum"] = r.spectrum->sigma;
    j["tail_energies"] = r.spectrum->tail_energy;
    j["eckart_young"] = {{"ranks", r.spectrum->ranks},
                         {"error_sq", r.spectrum->error_sq},
                         {"max_gap", r.spectrum->max_gap},
                         {"random_trials", r.spectrum->random_trials},
                         {"random_beaten", r.spectrum->random_beaten}};
  }
  if (!r.rank_sweep.empty()) {
    auto& rows = j["rank_sweep"] = nlohmann::json::array();
    for (const auto& row : r.rank_sweep) {
      rows.push_back({{"rank", row.rank},
                      {"closed_form_error_sq", row.closed_form_error_sq},
                      {"trained_error_sq", row.trained_error_sq},
                      {"trainable_params", row.trainable_params}});
    }
  }
  if (r.drift_metrics) {
    const auto& m = *r.drift_metrics;
    j["drift_metrics"] = {{"mean_to_mean_before", m.mean_to_mean_before},
                          {"nn_before", m.nn_before},
                          {"mean_to_mean_after", m.mean_to_mean_after},
                          {"nn_after", m.nn_after},
                          {"ratio", m.ratio}};
  }
  j["notes"] = r.notes;
  return j;
}

}  // namespace lab::theory
