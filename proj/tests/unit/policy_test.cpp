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

#include "lab/policy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lab/adapters.hpp"
#include "lab/error.hpp"
#include "lab/trainer.hpp"
#include "two_mode.hpp"

namespace lab::policy {
namespace {

TEST(InterpolateTest, Endpoints) {
  Rng rng(1);
  const Tensor a = sample_gaussian(rng, {4, 2}), w = sample_gaussian(rng, {4, 2});
  EXPECT_TRUE(interpolate(a, w, 1.0).bit_equal(a));
  EXPECT_TRUE(interpolate(a, w, 0.0).bit_equal(w));
  EXPECT_EQ(interpolate(Tensor::scalar(2.0), Tensor::scalar(0.0), 0.5).item(), 1.0);
  EXPECT_THROW(interpolate(a, w, 1.5), ContractError);
  EXPECT_THROW(interpolate(a, w, -0.1), ContractError);
  EXPECT_THROW(interpolate(a, Tensor({4}), 0.5), ShapeError);
}

TEST(InterpolateTest, FlowSampleIsExactInterpolant) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const FlowSample s = make_flow_sample(sample_gaussian(rng, {4, 2}), rng);
    ASSERT_GE(s.tau, 0.0);
    ASSERT_LT(s.tau, 1.0);
    for (std::size_t j = 0; j < 8; ++j)
      ASSERT_EQ(s.a_tau[j], s.tau * s.a[j] + (1.0 - s.tau) * s.omega[j]);
  }
}

TEST(FlowLossTest, Examples) {
  Rng rng(3);
  std::vector<FlowSample> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(make_flow_sample(sample_gaussian(rng, {4, 2}), rng));
  // Oracle predictor that returns the regression target.
  std::size_t k = 0;
  VelocityField oracle = [&](const Tensor&, double) {
    const FlowSample& s = batch[k++];
    return flow_target(s.a, s.omega);
  };
  EXPECT_EQ(flow_loss(oracle, batch), 0.0);

  VelocityField zero = [](const Tensor& x, double) { return Tensor(x.shape()); };
  const Tensor a = sample_gaussian(rng, {3});
  std::vector<FlowSample> same{{a, a, 0.3, interpolate(a, a, 0.3)}};
  EXPECT_EQ(flow_loss(zero, same), 0.0);

  std::vector<FlowSample> unit{{Tensor::scalar(1.0), Tensor::scalar(0.0), 0.5, Tensor::scalar(0.5)}};
  EXPECT_EQ(flow_loss(zero, unit), 1.0);

  ad::Tape tape;
  EXPECT_EQ(flow_loss(tape.constant(Tensor::scalar(0.0)), Tensor::scalar(1.0), Tensor::scalar(0.0))
                .value()
                .item(),
            1.0);
  EXPECT_THROW(flow_loss(tape.constant(Tensor({2})), Tensor({3}), Tensor({3})), ShapeError);
}

TEST(FlowLossTest, ConstantPredictorOptimumIsMeanTarget) {
  // For a frozen per-context table the least-squares output is the mean
  // target, which tends to a because E[omega] = 0.
  Rng rng(4);
  const std::vector<double> contexts{0.7, -0.2, 0.05};
  const std::size_t n = 20000;
  for (double a : contexts) {
    std::vector<FlowSample> batch;
    double mean_target = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      batch.push_back(make_flow_sample(Tensor::scalar(a), rng));
      mean_target += flow_target(batch.back().a, batch.back().omega).item();
    }
    mean_target /= static_cast<double>(n);
    EXPECT_NEAR(mean_target, a, 4.0 / std::sqrt(static_cast<double>(n)));
    auto constant = [](double c) {
      return VelocityField([c](const Tensor&, double) { return Tensor::scalar(c); });
    };
    const double best = flow_loss(constant(mean_target), batch);
    for (double d : {-0.1, -0.01, 0.01, 0.1}) EXPECT_LT(best, flow_loss(constant(mean_target + d), batch));
  }
}

TEST(EulerTest, ConstantAndZeroFields) {
  Rng rng(5);
  const Tensor omega = sample_gaussian(rng, {4, 2});
  const Tensor v = sample_gaussian(rng, {4, 2});
  VelocityField cst = [&](const Tensor&, double) { return v; };
  const Tensor out = euler_integrate(cst, omega, 10);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[i], omega[i] + v[i], 1e-12);
  VelocityField zero = [](const Tensor& x, double) { return Tensor(x.shape()); };
  EXPECT_TRUE(euler_integrate(zero, omega, 10).bit_equal(omega));
  EXPECT_THROW(euler_integrate(zero, omega, 0), ContractError);
}

TEST(EulerTest, LinearFieldConvergesToTarget) {
  VelocityField f = [](const Tensor& x, double tau) {
    return Tensor::scalar((0.7 - x.item()) / (1.0 - tau));
  };
  EXPECT_NEAR(euler_integrate(f, Tensor::scalar(0.0), 1000).item(), 0.7, 1e-2);
}

TEST(EulerTest, NaNNamesStep) {
  VelocityField f = [](const Tensor& x, double tau) {
    return Tensor(x.shape(), tau > 0.25 ? std::numeric_limits<double>::quiet_NaN() : 1.0);
  };
  try {
    euler_integrate(f, Tensor({2}), 10);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST(AdaRmsNormTest, Examples) {
  const Tensor x = Tensor::vector({3, 4});
  const Tensor y0 = ada_rms_norm(x, Tensor({2}), Tensor({2}));
  EXPECT_NEAR(y0[0], 0.6, 1e-15);
  EXPECT_NEAR(y0[1], 0.8, 1e-15);
  const Tensor y1 = ada_rms_norm(x, Tensor({2}, 1.0), Tensor({2}));
  EXPECT_NEAR(y1[0], 1.2, 1e-15);
  EXPECT_NEAR(y1[1], 1.6, 1e-15);
  EXPECT_THROW(ada_rms_norm(Tensor({2}), Tensor({2}), Tensor({2})), ContractError);
  EXPECT_TRUE(ada_rms_norm(Tensor({2}), Tensor({2}), Tensor({2}), 1e-8).all_finite());
  EXPECT_THROW(ada_rms_norm(x, Tensor({3}), Tensor({2})), ShapeError);
}

TEST(AdaRmsNormTest, UnitNormProperty) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const Tensor x = sample_gaussian(rng, {1 + rng.below(20)}, 1.0 + 10.0 * rng.uniform());
    EXPECT_NEAR(frobenius_norm(ada_rms_norm(x, Tensor(x.shape()), Tensor(x.shape()))), 1.0, 1e-12);
  }
}

TEST(AdaRmsNormTest, TapeMatchesScalar) {
  Rng rng(7);
  const Tensor x = sample_gaussian(rng, {2, 3, 5});
  const Tensor g = sample_gaussian(rng, {2, 5}), b = sample_gaussian(rng, {2, 5});
  ad::Tape tape;
  const Tensor y = ada_rms_norm(tape.constant(x), tape.constant(g), tape.constant(b)).value();
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t t = 0; t < 3; ++t) {
      Tensor row({5}), gr({5}), br({5});
      for (std::size_t d = 0; d < 5; ++d) {
        row[d] = x[(bi * 3 + t) * 5 + d];
        gr[d] = g[bi * 5 + d];
        br[d] = b[bi * 5 + d];
      }
      const Tensor ref = ada_rms_norm(row, gr, br);
      for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(y[(bi * 3 + t) * 5 + d], ref[d], 1e-14);
    }
}

TEST(SinusoidalTest, DeterministicAndBounded) {
  const Tensor a = sinusoidal_embedding(0.3, 16), b = sinusoidal_embedding(0.3, 16);
  EXPECT_TRUE(a.bit_equal(b));
  EXPECT_FALSE(a.bit_equal(sinusoidal_embedding(0.31, 16)));
  for (double v : a.data()) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_THROW(sinusoidal_embedding(0.3, 7), ContractError);
}

void check_mask_invariants(const SectionLengths& s, const AttentionMask& m) {
  const std::size_t p = s.prefix, d0 = p, s0 = p + s.discrete, e0 = s0 + s.state, n = s.total();
  ASSERT_EQ(m.size(), n);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) ASSERT_TRUE(m[i][j]);
  for (std::size_t i = e0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) ASSERT_TRUE(m[i][j]);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = d0; j < n; ++j) ASSERT_FALSE(m[i][j]);
  for (std::size_t i = e0; i < n; ++i)
    for (std::size_t j = d0; j < s0; ++j) ASSERT_FALSE(m[i][j]);
  for (std::size_t i = 0; i < n; ++i) ASSERT_TRUE(m[i][i]);
}

TEST(MaskTest, Examples) {
  const SectionLengths s{2, 0, 0, 1};
  const AttentionMask m = build_attention_mask(s);
  EXPECT_TRUE(m[2][0] && m[2][1]);
  EXPECT_FALSE(m[0][2] || m[1][2]);
  const SectionLengths with_disc{3, 2, 1, 2};
  const AttentionMask md = build_attention_mask(with_disc);
  for (std::size_t i = 6; i < 8; ++i)
    for (std::size_t j = 3; j < 5; ++j) EXPECT_FALSE(md[i][j]);
  const AttentionMask only_prefix = build_attention_mask({4, 0, 0, 0});
  EXPECT_EQ(only_prefix, AttentionMask(4, std::vector<bool>(4, true)));
}

TEST(MaskTest, FuzzInvariants) {
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const SectionLengths s{rng.below(7), rng.below(5), rng.below(3), rng.below(6)};
    check_mask_invariants(s, build_attention_mask(s));
  }
}

TEST(DiscreteTest, UniformLogits) {
  const std::vector<std::size_t> t{3, 0, 15};
  EXPECT_NEAR(discrete_loss(Tensor({3, 16}), t), std::log(16.0), 1e-15);
}

TEST(DiscreteTest, LargeMargin) {
  Tensor onehot({1, 16});
  onehot[5] = 20.0;
  const std::vector<std::size_t> t{5};
  // log(1 + 15 e^-20): a 20-nat gap to every other bin.
  EXPECT_NEAR(discrete_loss(onehot, t), std::log1p(15.0 * std::exp(-20.0)), 1e-15);
  Tensor pm({1, 16}, -20.0);
  pm[5] = 20.0;
  EXPECT_LT(discrete_loss(pm, t), 1e-8);
}

TEST(DiscreteTest, ScalarLogSumExpOracle) {
  Rng rng(9);
  const Tensor logits = sample_gaussian(rng, {6, 16}, 3.0);
  std::vector<std::size_t> t;
  for (int i = 0; i < 6; ++i) t.push_back(rng.below(16));
  double ref = 0.0;
  for (std::size_t r = 0; r < 6; ++r) {
    double mx = -1e300;
    for (std::size_t k = 0; k < 16; ++k) mx = std::max(mx, logits.at(r, k));
    double z = 0.0;
    for (std::size_t k = 0; k < 16; ++k) z += std::exp(logits.at(r, k) - mx);
    ref += mx + std::log(z) - logits.at(r, t[r]);
  }
  EXPECT_NEAR(discrete_loss(logits, t), ref / 6.0, 1e-12);
  const Tensor p = discrete_probs(logits);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 16; ++k) s += p.at(r, k);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  const std::vector<std::size_t> bad{16, 0, 0, 0, 0, 0};
  EXPECT_THROW(discrete_loss(logits, bad), ContractError);
}

TEST(DiscreteTest, Bins) {
  EXPECT_EQ(action_to_bin(-1.0, 16), 0u);
  EXPECT_EQ(action_to_bin(1.0, 16), 15u);
  EXPECT_EQ(action_to_bin(-2.0, 16), 0u);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(action_to_bin(bin_center(k, 16), 16), k);
  EXPECT_THROW(bin_center(16, 16), ContractError);
}

// ---- joint model -----------------------------------------------------------

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.encoder.image_size = 16;
  cfg.encoder.patch_size = 8;
  cfg.encoder.d_model = 32;
  cfg.encoder.n_layers = 1;
  cfg.encoder.n_heads = 2;
  cfg.policy.n_heads = 2;
  return cfg;
}

Image random_image(std::size_t size, Rng& rng) {
  Image img(size, size);
  for (double& v : img.pixels) v = rng.uniform();
  return img;
}

struct Probe {
  std::vector<Image> images;
  ExpertInput in;
};

Probe make_probe(const ModelConfig& cfg, std::size_t b, Rng& rng) {
  Probe p;
  for (std::size_t i = 0; i < b; ++i) {
    p.images.push_back(random_image(cfg.encoder.image_size, rng));
    p.in.tasks.push_back(rng.below(cfg.policy.task_vocab));
    p.in.tau.push_back(rng.uniform());
  }
  p.in.states = sample_gaussian(rng, {b, cfg.policy.state_dim}, 0.5);
  p.in.a_tau = sample_gaussian(rng, {b, cfg.policy.horizon, cfg.policy.action_dim});
  return p;
}

std::pair<Tensor, Tensor> run(const ParamStore& store, const ModelConfig& cfg, const Probe& p) {
  ad::Tape tape;
  const auto out = expert_forward(tape, store, cfg, visual_prefix(tape, store, cfg, p.images), p.in);
  return {out.velocity.value(), out.discrete_logits.value()};
}

TEST(ModelTest, Shapes) {
  const ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(10);
  init_model(store, cfg, rng);
  const Probe p = make_probe(cfg, 3, rng);
  const auto [v, logits] = run(store, cfg, p);
  EXPECT_EQ(v.shape(), (Shape{3, 4, 2}));
  EXPECT_EQ(logits.shape(), (Shape{24, 16}));
  nlohmann::json j = cfg;
  EXPECT_EQ(j.get<ModelConfig>(), cfg);
}

TEST(ModelTest, IdentityAtInitForEveryAdapter) {
  const ModelConfig cfg = small_config();
  ParamStore base;
  Rng rng(11);
  init_model(base, cfg, rng);
  const Probe p = make_probe(cfg, 4, rng);
  const auto [v0, l0] = run(base, cfg, p);
  using adapters::AdapterKind;
  for (const auto& kind : {AdapterKind::ftm(), AdapterKind::fla(4), AdapterKind::prompt(0),
                           AdapterKind::full_lora(4)}) {
    ParamStore s = base;
    Rng arng(12);
    train::prepare_adapter(s, cfg, kind, arng);
    const auto [v, l] = run(s, cfg, p);
    EXPECT_TRUE(v.bit_equal(v0)) << kind.to_string();
    EXPECT_TRUE(l.bit_equal(l0)) << kind.to_string();
  }
  ParamStore s = base;
  Rng arng(13);
  train::prepare_adapter(s, cfg, AdapterKind::prompt(2), arng);
  EXPECT_FALSE(run(s, cfg, p).first.bit_equal(v0));
}

TEST(ModelTest, InformationBarriers) {
  const ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(14);
  init_model(store, cfg, rng);
  Probe p = make_probe(cfg, 2, rng);
  const auto [v0, l0] = run(store, cfg, p);

  // Discrete rows never see the state or the noisy actions.
  Probe q = p;
  q.in.a_tau = sample_gaussian(rng, q.in.a_tau.shape());
  q.in.states = sample_gaussian(rng, q.in.states.shape());
  q.in.tau = {0.9, 0.1};
  const auto [v1, l1] = run(store, cfg, q);
  EXPECT_TRUE(l1.bit_equal(l0));
  EXPECT_FALSE(v1.bit_equal(v0));

  // Expert rows never see the discrete queries.
  ParamStore changed = store;
  changed.set("expert/discrete_queries",
              sample_gaussian(rng, store.value("expert/discrete_queries").shape()));
  const auto [v2, l2] = run(changed, cfg, p);
  EXPECT_TRUE(v2.bit_equal(v0));
  EXPECT_FALSE(l2.bit_equal(l0));
}

TEST(ModelTest, ParameterGradientsMatchFiniteDifferences) {
  ModelConfig cfg = small_config();
  cfg.encoder.image_size = 8;
  cfg.encoder.patch_size = 4;
  cfg.encoder.d_model = 8;
  cfg.policy.n_layers = 1;
  cfg.policy.mlp_ratio = 2;
  cfg.policy.bins = 4;
  cfg.policy.discrete_weight = 0.5;
  ParamStore store;
  Rng rng(15);
  init_model(store, cfg, rng);
  Rng arng(16);
  train::prepare_adapter(store, cfg, adapters::AdapterKind::ftm(), arng);
  store.set_all_trainable(true);
  store.set("adapter/ftm/gamma", sample_gaussian(arng, {8}, 0.3));
  std::vector<Transition> data;
  for (int i = 0; i < 2; ++i) {
    data.push_back({random_image(8, rng), rng.below(2), sample_gaussian(rng, {2}, 0.5),
                    sample_gaussian(rng, {4, 2}, 0.5)});
  }
  std::vector<const Transition*> batch{&data[0], &data[1]};
  std::vector<Image> imgs{data[0].image, data[1].image};
  auto loss_of = [&](const ParamStore& s, ad::Tape& tape) {
    Rng noise(17);
    return policy_loss(tape, s, cfg, visual_prefix(tape, s, cfg, imgs), batch, noise).total;
  };
  ad::Tape tape;
  const auto grads = tape.backward(loss_of(store, tape)).named();
  const double h = 1e-6;
  for (const auto& name : store.names()) {
    ASSERT_TRUE(grads.count(name)) << name;
    const Tensor u = sample_gaussian(rng, store.value(name).shape());
    double analytic = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) analytic += grads.at(name)[i] * u[i];
    ParamStore plus = store, minus = store;
    plus.set(name, store.value(name) + h * u);
    minus.set(name, store.value(name) - h * u);
    ad::Tape tp, tm;
    const double fd = (loss_of(plus, tp).value().item() - loss_of(minus, tm).value().item()) / (2 * h);
    EXPECT_NEAR(analytic, fd, 1e-5 * std::max(1.0, std::abs(fd))) << name;
  }
}

TEST(ModelTest, SamplingIsDeterministicPerSeed) {
  const ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(18);
  init_model(store, cfg, rng);
  const Probe p = make_probe(cfg, 2, rng);
  Rng r1(5), r2(5);
  const Tensor a = act(store, cfg, p.images, p.in.tasks, p.in.states, r1);
  const Tensor b = act(store, cfg, p.images, p.in.tasks, p.in.states, r2);
  EXPECT_TRUE(a.bit_equal(b));
  EXPECT_EQ(a.shape(), (Shape{2, 4, 2}));
}

TEST(TwoModeTest, RecoversBothModes) {
  const auto res = testing::run_two_mode(300, 1000, 7);
  double mean = 0.0;
  std::size_t near = 0, pos = 0;
  for (double s : res.samples) {
    mean += s;
    near += std::abs(std::abs(s) - 0.5) < 0.1;
    pos += s > 0.0;
  }
  mean /= static_cast<double>(res.samples.size());
  EXPECT_GE(near, 900u);
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_GT(pos, 400u);
  EXPECT_LT(pos, 600u);
}

}  // namespace
}  // namespace lab::policy
