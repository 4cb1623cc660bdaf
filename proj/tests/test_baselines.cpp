// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "sattn/baselines.hpp"
#include "sattn/data.hpp"
#include "sattn/error.hpp"

using namespace sattn;

namespace {

struct Fixture {
  ModelBundle model;
  DataSplits splits;
};

const Fixture& sinusoid() {
  static const Fixture f = [] {
    SinusoidSpec spec;
    spec.n = 400;
    spec.noise_sigma = 0.3;
    spec.seed = 21;
    Fixture out;
    out.splits = split(make_sinusoid(spec), {});
    EncoderConfig c;
    c.d_model = 8;
    c.d_ff = 16;
    c.seed = 5;
    out.model = fit_readout(init_encoder(c), out.splits.train.cases, 1.0);
    return out;
  }();
  return f;
}

InputCase at(double x) {
  InputCase c;
  c.features = Eigen::VectorXd::Constant(1, x);
  return c;
}

double sample_mean(const PredictiveEnsemble& e) { return e.mean(); }

double sample_var(const PredictiveEnsemble& e) {
  const double m = e.mean();
  double s = 0.0;
  for (double v : e.samples) s += (v - m) * (v - m);
  return s / static_cast<double>(e.size() - 1);
}

}  // namespace

TEST(McDropout, RateZeroIsDeterministic) {
  const auto& m = sinusoid().model;
  DropoutSpec spec;
  spec.rate = 0.0;
  for (auto loc : {DropoutLocation::PooledFeatures, DropoutLocation::ReadoutInputs}) {
    spec.location = loc;
    const auto e = mc_dropout_ensemble(m, at(0.4), spec, 10, 3);
    for (double v : e.samples) EXPECT_EQ(v, forward_deterministic(m, at(0.4)));
  }
}

TEST(McDropout, TwoOutcomesOnSingleFeatureReadout) {
  ModelBundle m = sinusoid().model;
  m.readout.weights.setZero();
  m.readout.weights[3] = 1.7;
  m.readout.bias = -0.2;
  const InputCase x = at(1.1);
  const double phi3 = pooled_features(m, x)[3];
  DropoutSpec spec;
  spec.rate = 0.5;
  const auto e = mc_dropout_ensemble(m, x, spec, 200, 8);
  std::set<double> values(e.samples.begin(), e.samples.end());
  ASSERT_EQ(values.size(), 2u);
  EXPECT_TRUE(values.contains(-0.2));
  values.erase(-0.2);
  EXPECT_DOUBLE_EQ(*values.begin(), -0.2 + 2.0 * 1.7 * phi3);
}

TEST(McDropout, MeanIsUnbiased) {
  const auto& m = sinusoid().model;
  DropoutSpec spec;
  spec.rate = 0.1;
  for (auto loc : {DropoutLocation::PooledFeatures, DropoutLocation::ReadoutInputs}) {
    spec.location = loc;
    const auto e = mc_dropout_ensemble(m, at(-0.8), spec, 10000, 4);
    EXPECT_NEAR(sample_mean(e), forward_deterministic(m, at(-0.8)), 3.0 * std::sqrt(sample_var(e) / 10000.0));
  }
}

TEST(McDropout, SeededAndValidated) {
  const auto& m = sinusoid().model;
  DropoutSpec spec;
  EXPECT_EQ(mc_dropout_ensemble(m, at(0.1), spec, 20, 1).samples, mc_dropout_ensemble(m, at(0.1), spec, 20, 1).samples);
  EXPECT_NE(mc_dropout_ensemble(m, at(0.1), spec, 20, 1).samples, mc_dropout_ensemble(m, at(0.1), spec, 20, 2).samples);
  spec.rate = 1.0;
  EXPECT_THROW(mc_dropout_ensemble(m, at(0.1), spec, 20, 1), Error);
}

TEST(SwagDiag, SnapshotFormulas) {
  const Eigen::Vector3d w{1.5, -2.0, 0.25};
  const std::vector<Eigen::VectorXd> same{w, w, w};
  const auto p = swag_diag_from_snapshots(same);
  EXPECT_EQ(p.mean, Eigen::VectorXd(w));
  EXPECT_EQ(p.diag_variance, Eigen::VectorXd::Zero(3));

  const std::vector<Eigen::VectorXd> pm{w, -w};
  const auto q = swag_diag_from_snapshots(pm);
  EXPECT_EQ(q.mean, Eigen::VectorXd::Zero(3));
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(q.diag_variance[k], w[k] * w[k]);

  const std::vector<Eigen::VectorXd> one{w};
  EXPECT_THROW(swag_diag_from_snapshots(one), Error);
}

TEST(SwagDiag, SgdTrajectoryAverages) {
  const auto& f = sinusoid();
  SwagSchedule sched;
  sched.steps = 600;
  sched.burn_in = 100;
  sched.snapshot_every = 25;
  const auto fit = swag_diag_readout(f.model, f.splits.train.cases, sched, 9);
  EXPECT_EQ(fit.snapshots.size(), 20u);
  EXPECT_EQ(fit.sgd_steps, 600u);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(fit.snapshots[0].size());
  for (const auto& s : fit.snapshots) mean += s;
  mean /= 20.0;
  EXPECT_LT((mean - fit.posterior.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GE(fit.posterior.diag_variance.minCoeff(), 0.0);
  EXPECT_GT(fit.posterior.diag_variance.maxCoeff(), 0.0);
  const auto again = swag_diag_readout(f.model, f.splits.train.cases, sched, 9);
  EXPECT_EQ(again.posterior.mean, fit.posterior.mean);
}

TEST(SwagDiag, ZeroVarianceIsDeterministic) {
  const auto& m = sinusoid().model;
  ReadoutPosterior p;
  p.mean.resize(m.config.d_model + 1);
  p.mean.head(m.config.d_model) = m.readout.weights;
  p.mean[m.config.d_model] = m.readout.bias;
  p.diag_variance = Eigen::VectorXd::Zero(m.config.d_model + 1);
  const auto e = swag_diag_ensemble(m, p, at(2.0), 16, 3);
  for (double v : e.samples) EXPECT_DOUBLE_EQ(v, forward_deterministic(m, at(2.0)));
}

TEST(SwagDiag, EnsembleVarianceClosedForm) {
  const auto& m = sinusoid().model;
  const Eigen::Index d = m.config.d_model;
  ReadoutPosterior p;
  p.mean = Eigen::VectorXd::LinSpaced(d + 1, -0.3, 0.3);
  p.diag_variance = Eigen::VectorXd::LinSpaced(d + 1, 0.01, 0.2);
  const InputCase x = at(-1.4);
  Eigen::VectorXd phi1(d + 1);
  phi1.head(d) = pooled_features(m, x);
  phi1[d] = 1.0;
  for (double scale : {1.0, 4.0}) {
    const double expected = 0.5 * scale * (phi1.array().square() * p.diag_variance.array()).sum();
    const auto e = swag_diag_ensemble(m, p, x, 10000, 5, scale);
    // Gaussian samples: var of the sample variance is 2 sigma^4 / (n - 1)
    EXPECT_NEAR(sample_var(e), expected, 3.0 * expected * std::sqrt(2.0 / 9999.0));
    EXPECT_NEAR(sample_mean(e), phi1.dot(p.mean), 3.0 * std::sqrt(expected / 10000.0));
    EXPECT_EQ(e.samples, swag_diag_ensemble(m, p, x, 10000, 5, scale).samples);
  }
}

TEST(DeepEnsemble, NoResampleGivesIdenticalMembers) {
  const auto& f = sinusoid();
  const auto members = deep_ensemble_readout(f.model, f.splits.train.cases, 4, 1, 1.0, false);
  ASSERT_EQ(members.size(), 4u);
  for (const auto& mb : members) EXPECT_EQ(mb.readout.weights, members[0].readout.weights);
  const auto e = deep_ensemble_predict(members, at(0.3));
  for (double v : e.samples) EXPECT_EQ(v, e.samples[0]);
}

TEST(DeepEnsemble, TwoPointBootstrapEnumeration) {
  // Each member resamples {a, b}. When it picks one point twice the
  // centred design is zero, so weights vanish and the bias is that target.
  const auto& m = sinusoid().model;
  std::vector<InputCase> two{at(-1.0), at(2.0)};
  two[0].target = 0.4;
  two[1].target = -1.3;
  const std::size_t L = 32;
  const auto members = deep_ensemble_readout(m, two, L, 17, 1.0);
  std::size_t exclusive = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const auto idx = bootstrap_indices(2, 17, l);
    if (idx[0] != idx[1]) continue;
    ++exclusive;
    const double y = *two[idx[0]].target;
    EXPECT_NEAR(members[l].readout.bias, y, 1e-12);
    EXPECT_LT(members[l].readout.weights.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(forward_deterministic(members[l], at(0.0)), y, 1e-12);
  }
  EXPECT_GT(exclusive, 0u);
}

TEST(DeepEnsemble, PooledMeanNearFullFit) {
  const auto& f = sinusoid();
  const std::size_t L = 200;
  const auto members = deep_ensemble_readout(f.model, f.splits.train.cases, L, 3, 1.0);
  for (double x : {-2.0, 0.0, 1.5}) {
    const auto e = deep_ensemble_predict(members, at(x));
    EXPECT_EQ(e.size(), L);
    EXPECT_NEAR(sample_mean(e), forward_deterministic(f.model, at(x)), 3.0 * std::sqrt(sample_var(e) / L));
  }
  EXPECT_THROW(deep_ensemble_readout(f.model, f.splits.train.cases, 1, 3, 1.0), Error);
}

TEST(BootstrapIndices, SeededAndInRange) {
  const auto a = bootstrap_indices(50, 4, 2);
  EXPECT_EQ(a, bootstrap_indices(50, 4, 2));
  EXPECT_NE(a, bootstrap_indices(50, 4, 3));
  for (auto i : a) EXPECT_LT(i, 50u);
}
