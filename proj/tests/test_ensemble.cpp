// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sattn/data.hpp"
#include "sattn/ensemble.hpp"
#include "sattn/error.hpp"

using namespace sattn;

namespace {

PredictiveEnsemble ens(std::vector<double> s) {
  PredictiveEnsemble e;
  e.samples = std::move(s);
  return e;
}

// Small model fit on the sinusoid, reused across tests.
const ModelBundle& sinusoid_model() {
  static const ModelBundle model = [] {
    SinusoidSpec spec;
    spec.n = 400;
    spec.noise_sigma = 0.2;
    spec.seed = 4;
    const auto splits = split(make_sinusoid(spec), {});
    EncoderConfig c;
    c.d_model = 16;
    c.d_ff = 32;
    c.n_tokens = 4;
    return with_stochastic_layers(fit_readout(init_encoder(c), splits.train.cases, 1.0), all_layers(c));
  }();
  return model;
}

InputCase scalar_case(double x) {
  InputCase c;
  c.features = Eigen::VectorXd::Constant(1, x);
  return c;
}

}  // namespace

TEST(EmpiricalCdf, Examples) {
  EXPECT_EQ(empirical_cdf(ens({1, 2, 3}), 0.5), 0.0);
  EXPECT_EQ(empirical_cdf(ens({1, 2, 3, 4}), 2.5), 0.5);
  EXPECT_EQ(empirical_cdf(ens({1, 2, 2, 3}), 2.0), 0.5);
  EXPECT_EQ(empirical_cdf(ens({1, 2, 3}), 3.5), 1.0);
  EXPECT_EQ(empirical_cdf(ens({7, 7}), 7.0), 0.5);
}

TEST(EmpiricalCdf, NondecreasingWithBounds) {
  RandomStream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(2 + rng() % 30);
    for (auto& v : s) v = std::floor(10.0 * rng.uniform());  // forces ties
    const auto e = ens(s);
    const double lo = *std::min_element(s.begin(), s.end()), hi = *std::max_element(s.begin(), s.end());
    double prev = -1.0;
    for (double t = lo - 1.0; t <= hi + 1.0; t += 0.25) {
      const double f = empirical_cdf(e, t);
      EXPECT_GE(f, prev);
      prev = f;
    }
    EXPECT_EQ(empirical_cdf(e, lo - 1e-9), 0.0);
    EXPECT_EQ(empirical_cdf(e, hi + 1e-9), 1.0);
  }
}

TEST(CentralInterval, Examples) {
  const auto flat = central_interval(ens({3, 3, 3}), 0.9);
  EXPECT_EQ(flat.lo, 3.0);
  EXPECT_EQ(flat.hi, 3.0);
  EXPECT_EQ(flat.width(), 0.0);

  std::vector<double> grid(101);
  std::iota(grid.begin(), grid.end(), 0.0);
  std::shuffle(grid.begin(), grid.end(), RandomStream(1));
  const auto iv = central_interval(ens(grid), 0.9);
  EXPECT_NEAR(iv.lo, 5.0, 1e-12);
  EXPECT_NEAR(iv.hi, 95.0, 1e-12);

  const auto wide = central_interval(ens(grid), 1.0 - 1e-12);
  EXPECT_NEAR(wide.lo, 0.0, 1e-9);
  EXPECT_NEAR(wide.hi, 100.0, 1e-9);

  EXPECT_THROW(central_interval(ens(grid), 1.0), Error);
  EXPECT_THROW(central_interval(ens({1.0}), 0.5), Error);
}

TEST(CentralInterval, WidthGrowsWithLevel) {
  RandomStream rng(8);
  std::vector<double> s(57);
  for (auto& v : s) v = rng.uniform() * rng.uniform();
  double prev = -1.0;
  for (double level = 0.05; level < 1.0; level += 0.05) {
    const double w = central_interval(ens(s), level).width();
    EXPECT_GE(w, prev);
    prev = w;
  }
}

TEST(SortedQuantile, Type7) {
  const std::vector<double> s{1.0, 2.0, 4.0, 8.0};
  EXPECT_EQ(sorted_quantile(s, 0.0), 1.0);
  EXPECT_EQ(sorted_quantile(s, 1.0), 8.0);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.5), 3.0);  // h = 1.5
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.25), 1.75);
}

TEST(DrawEnsemble, ComposesForwardPasses) {
  const auto& m = sinusoid_model();
  const InputCase x = scalar_case(0.7);
  const auto e = draw_ensemble(m, x, Concentration(3), 2, 55);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e.samples[0], forward_stochastic(m, x, Concentration(3), 0, 55));
  EXPECT_EQ(e.samples[1], forward_stochastic(m, x, Concentration(3), 1, 55));
  EXPECT_EQ(e.deterministic_value, forward_deterministic(m, x));
  EXPECT_EQ(e.meta.method, "sa");
  EXPECT_EQ(e.meta.params.at("nu"), 3.0);
  EXPECT_EQ(draw_ensemble(m, x, Concentration(3), 2, 55).samples, e.samples);
  EXPECT_THROW(draw_ensemble(m, x, Concentration(3), 1, 55), Error);
}

TEST(DrawEnsemble, DegenerateAttentionGivesPointMass) {
  EncoderConfig c;
  c.n_tokens = 1;
  ModelBundle m = with_stochastic_layers(init_encoder(c), all_layers(c));
  m.readout.weights = Eigen::VectorXd::LinSpaced(c.d_model, -1.0, 1.0);
  const auto e = draw_ensemble(m, scalar_case(0.3), Concentration(1), 20, 9);
  for (double s : e.samples) EXPECT_EQ(s, e.deterministic_value);
}

TEST(DrawEnsemble, LargeNuMeanNearDeterministic) {
  const auto& m = sinusoid_model();
  const InputCase x = scalar_case(-1.2);
  const auto e = draw_ensemble(m, x, Concentration(1000), 500, 21);
  const double mean = e.mean();
  double ss = 0.0;
  for (double s : e.samples) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / (e.size() - 1));
  EXPECT_NEAR(mean, e.deterministic_value, 3.0 * sd / std::sqrt(500.0));
}

TEST(EnsembleDump, CsvAndSidecar) {
  PredictiveEnsemble a = ens({0.5, -1.0});
  a.deterministic_value = 0.25;
  a.meta.method = "sa";
  a.meta.params["nu"] = 4;
  PredictiveEnsemble b = ens({2.0, 3.0});
  b.deterministic_value = 2.5;
  b.meta = a.meta;
  const std::vector<PredictiveEnsemble> v{a, b};
  EXPECT_EQ(ensemble_csv(v), "case_id,sample_index,value\n0,0,0.5\n0,1,-1\n1,0,2\n1,1,3\n");
  const auto side = ensemble_sidecar(v);
  EXPECT_EQ(side["n_cases"], 2);
  EXPECT_EQ(side["M"], 2);
  EXPECT_EQ(side["method"], "sa");
  EXPECT_EQ(side["deterministic_values"][1], 2.5);
}
