// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sattn/bayesopt.hpp"
#include "sattn/data.hpp"
#include "sattn/error.hpp"

using namespace sattn;

namespace {

CalibrationRecord rec(std::int64_t nu, double scale, double loss = 0.0) {
  CalibrationRecord r;
  r.nu = nu;
  r.scale_estimate = scale;
  r.loss_estimate = loss;
  r.target_scale = 1.0;
  return r;
}

double power_law(std::int64_t nu) { return 2.0 * std::pow(static_cast<double>(nu), -0.5); }

std::vector<CalibrationRecord> noiseless(std::initializer_list<std::int64_t> nus) {
  std::vector<CalibrationRecord> h;
  for (auto nu : nus) h.push_back(rec(nu, power_law(nu), std::pow(power_law(nu) - 1.0, 2)));
  return h;
}

// Weighted least squares of ln s on (ln nu, 1).
Eigen::Vector2d ols(const std::vector<CalibrationRecord>& h) {
  Eigen::MatrixXd X(h.size(), 2);
  Eigen::VectorXd y(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    X(i, 0) = std::log(static_cast<double>(h[i].nu));
    X(i, 1) = 1.0;
    y[i] = std::log(h[i].scale_estimate);
  }
  return X.colPivHouseholderQr().solve(y);
}

template <class F>
void expect_code(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "no throw";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code);
  }
}

}  // namespace

TEST(FitSurrogate, RecoversNoiselessPowerLaw) {
  const auto h = noiseless({1, 4, 16, 64});
  const auto post = fit_surrogate(h);
  EXPECT_NEAR(post.coef_mean[0], -0.5, 1e-6);
  EXPECT_NEAR(post.coef_mean[1], std::log(2.0), 1e-6);
  EXPECT_EQ(post.n_obs, 4u);
  EXPECT_GT(post.noise_shape, 0.0);
  EXPECT_GT(post.noise_scale, 0.0);
  const Eigen::Matrix2d c = post.coef_scale;
  EXPECT_DOUBLE_EQ(c(0, 1), c(1, 0));
  EXPECT_GT(c.determinant(), 0.0);
  EXPECT_GT(c(0, 0), 0.0);
}

TEST(FitSurrogate, TwoPointsInterpolate) {
  const std::vector<CalibrationRecord> h{rec(3, 0.9), rec(40, 0.11)};
  const auto post = fit_surrogate(h);
  for (const auto& r : h) {
    EXPECT_NEAR(post.coef_mean[0] * std::log(static_cast<double>(r.nu)) + post.coef_mean[1], std::log(r.scale_estimate),
                1e-6);
  }
}

TEST(FitSurrogate, FlatPriorLimitIsLeastSquares) {
  RandomStream rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CalibrationRecord> h;
    for (int i = 0; i < 6; ++i) {
      const auto nu = static_cast<std::int64_t>(1 + rng() % 500);
      h.push_back(rec(nu, std::exp(0.3 * rng.uniform() - 1.0) * std::pow(static_cast<double>(nu), -0.7)));
    }
    if (std::set<std::int64_t>{h[0].nu, h[1].nu, h[2].nu, h[3].nu, h[4].nu, h[5].nu}.size() < 2) continue;
    SurrogatePrior flat;
    flat.coef_precision = 1e-14;
    const auto post = fit_surrogate(h, flat);
    const Eigen::Vector2d ref = ols(h);
    EXPECT_LT((post.coef_mean - ref).norm() / ref.norm(), 1e-8);
  }
  // exact line: relative error below 1e-8 under the default prior as well
  const auto line = noiseless({2, 5, 9, 300});
  const Eigen::Vector2d ref = ols(line);
  EXPECT_LT((fit_surrogate(line).coef_mean - ref).norm() / ref.norm(), 1e-8);
}

TEST(FitSurrogate, DuplicateObservationOnlyConcentrates) {
  std::vector<CalibrationRecord> h{rec(2, 1.3), rec(8, 0.8), rec(30, 0.31)};
  const auto before = fit_surrogate(h);
  h.push_back(h[1]);
  const auto after = fit_surrogate(h);
  // weighted-OLS oracle with weight 2 on the repeated point
  EXPECT_NEAR(after.coef_mean[0], ols(h)[0], 1e-8);
  EXPECT_EQ(after.n_obs, 4u);
  EXPECT_LT(after.coef_scale(0, 0), before.coef_scale(0, 0));
  EXPECT_GT(after.noise_shape, before.noise_shape);
}

TEST(FitSurrogate, Errors) {
  expect_code(ErrorCode::DegenerateDesign, [] {
    const std::vector<CalibrationRecord> h{rec(5, 1.0), rec(5, 0.9), rec(5, 1.1)};
    fit_surrogate(h);
  });
  expect_code(ErrorCode::NonPositiveScale, [] {
    const std::vector<CalibrationRecord> h{rec(1, 1.0), rec(5, 0.0)};
    fit_surrogate(h);
  });
}

TEST(ThompsonDraw, CollapsedPosterior) {
  SurrogatePosterior p;
  p.coef_mean = {-0.5, 0.7};
  p.coef_scale = 1e-10 * Eigen::Matrix2d::Identity();
  p.noise_shape = 1e6;
  p.noise_scale = 1e-3 * 1e6;
  RandomStream rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto d = thompson_draw(p, rng);
    EXPECT_NEAR(d.a, -0.5, 1e-3);
    EXPECT_NEAR(d.ln_b, 0.7, 1e-3);
    EXPECT_NEAR(d.eps2, 1e-3, 1e-4);
  }
}

TEST(ThompsonDraw, SeededReproducible) {
  const auto post = fit_surrogate(noiseless({1, 4, 16}));
  RandomStream a(77), b(77);
  const auto x = thompson_draw(post, a), y = thompson_draw(post, b);
  EXPECT_EQ(x.a, y.a);
  EXPECT_EQ(x.ln_b, y.ln_b);
  EXPECT_EQ(x.eps2, y.eps2);
}

TEST(ThompsonDraw, MomentsMatchPosterior) {
  SurrogatePosterior p;
  p.coef_mean = {-0.8, 0.2};
  p.coef_scale << 0.5, -0.2, -0.2, 0.3;
  p.noise_shape = 6.0;
  p.noise_scale = 0.5;  // E[eps2] = 0.1, var = 0.1^2 / 4
  RandomStream rng(3);
  const int N = 100000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  Eigen::Matrix2d outer = Eigen::Matrix2d::Zero();
  double e_sum = 0.0, e_sq = 0.0;
  std::vector<Eigen::Vector2d> draws;
  draws.reserve(N);
  for (int i = 0; i < N; ++i) {
    const auto d = thompson_draw(p, rng);
    const Eigen::Vector2d v{d.a, d.ln_b};
    draws.push_back(v);
    sum += v;
    e_sum += d.eps2;
    e_sq += d.eps2 * d.eps2;
  }
  const Eigen::Vector2d mean = sum / N;
  for (const auto& v : draws) outer += (v - mean) * (v - mean).transpose();
  const Eigen::Matrix2d cov = outer / (N - 1);
  const Eigen::Matrix2d target = p.coef_covariance();
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(mean[j], p.coef_mean[j], 3.0 * std::sqrt(target(j, j) / N));
  }
  // Student-t with 2*shape = 12 dof: use empirical fourth moments for the stderr
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      double m4 = 0.0;
      for (const auto& v : draws) {
        const double t = (v[r] - mean[r]) * (v[c] - mean[c]) - cov(r, c);
        m4 += t * t;
      }
      EXPECT_NEAR(cov(r, c), target(r, c), 3.0 * std::sqrt(m4 / N / N)) << r << c;
    }
  }
  const double em = e_sum / N;
  const double ev = e_sq / N - em * em;
  EXPECT_NEAR(em, p.noise_mean(), 3.0 * std::sqrt(ev / N));
}

TEST(Acquisition, ClosedFormExamples) {
  const SearchDomain wide{1, 1000};
  EXPECT_EQ(acquisition_minimizer(-0.5, std::log(2.0), 0.0, 1.0, wide), 4);
  for (double a : {-2.0, -0.3, 0.4, 1.5}) EXPECT_EQ(acquisition_minimizer(a, std::log(1.7), 0.0, 1.7, wide), 1);
  // continuous optimum 37.2 on [1, 10] clamps to 10
  const double a = -0.5, s0 = 1.0;
  const double ln_b = std::log(s0) - a * std::log(37.2);
  EXPECT_NEAR(std::exp(continuous_minimizer_log(a, ln_b, 0.0, s0)), 37.2, 1e-9);
  EXPECT_EQ(acquisition_minimizer(a, ln_b, 0.0, s0, {1, 10}), 10);
  EXPECT_EQ(acquisition_minimizer(a, ln_b, 0.0, s0, {50, 90}), 50);
  expect_code(ErrorCode::ZeroExponent, [] { acquisition_minimizer(0.0, 0.0, 0.1, 1.0, {1, 10}); });
}

TEST(Acquisition, TiesTowardSmallerNu) {
  const double a = -1.0, s0 = 1.0;
  const double ln_b = std::log(4.5);  // continuous optimum exactly 4.5
  EXPECT_EQ(acquisition_minimizer(a, ln_b, 0.0, s0, {1, 100}), 4);
}

TEST(Acquisition, MatchesDenseGridSearch) {
  // 100 random tuples; brute-force integer minimization of the expected
  // squared discrepancy over the whole domain.
  RandomStream rng(2024);
  const SearchDomain dom{1, 1000};
  for (int t = 0; t < 100; ++t) {
    const double a = -2.0 + 1.9 * rng.uniform();
    const double ln_b = -1.0 + 3.0 * rng.uniform();
    const double eps2 = 0.5 * rng.uniform();
    const double s0 = 0.05 + 2.0 * rng.uniform();
    std::int64_t best = 1;
    double best_v = surrogate_objective(1.0, a, ln_b, eps2, s0);
    for (std::int64_t nu = 2; nu <= dom.nu_max; ++nu) {
      const double v = surrogate_objective(static_cast<double>(nu), a, ln_b, eps2, s0);
      if (v < best_v) {
        best_v = v;
        best = nu;
      }
    }
    const std::int64_t got = acquisition_minimizer(a, ln_b, eps2, s0, dom);
    EXPECT_LE(std::abs(got - best), 1) << "a=" << a << " ln_b=" << ln_b << " eps2=" << eps2 << " s0=" << s0;
  }
}

TEST(Suggest, SpaceFillingAndSingleton) {
  RandomStream rng(1);
  EXPECT_EQ(suggest_next({}, {1, 1024}, 1.0, rng), 32);
  const auto one = noiseless({32});
  const auto s = suggest(one, {1, 1024}, 1.0, rng);
  EXPECT_EQ(s.source, "space_filling");
  EXPECT_EQ(s.nu, 6);  // sqrt(32) rounded
  for (int i = 0; i < 10; ++i) EXPECT_EQ(suggest_next(noiseless({7}), {7, 7}, 1.0, rng), 7);
  EXPECT_EQ(suggest_next(noiseless({1, 4, 16, 64}), {7, 7}, 1.0, rng), 7);
}

TEST(Suggest, NoiselessHistoryGivesFour) {
  RandomStream rng(5);
  const auto s = suggest(noiseless({1, 16, 64}), {1, 1024}, 1.0, rng);
  EXPECT_EQ(s.source, "thompson");
  EXPECT_EQ(s.nu, 4);
  // 4 already evaluated: step to a neighbour instead of repeating
  const auto r = suggest_next(noiseless({1, 4, 16, 64}), {1, 1024}, 1.0, rng);
  EXPECT_TRUE(r == 3 || r == 5) << r;
}

TEST(Suggest, ConvergesWithinFiveIterations) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RandomStream rng(seed);
    std::vector<CalibrationRecord> h;
    bool hit = false;
    for (int k = 0; k < 5 && !hit; ++k) {
      const auto nu = suggest_next(h, {1, 1024}, 1.0, rng);
      h.push_back(rec(nu, power_law(nu)));
      hit = nu == 4;
    }
    EXPECT_TRUE(hit) << "seed " << seed;
  }
}

TEST(Suggest, NeverRepeatsUntilExhausted) {
  RandomStream rng(9);
  std::vector<CalibrationRecord> h;
  std::set<std::int64_t> seen;
  for (int k = 0; k < 12; ++k) {
    const auto nu = suggest_next(h, {3, 14}, 0.5, rng);
    ASSERT_GE(nu, 3);
    ASSERT_LE(nu, 14);
    EXPECT_TRUE(seen.insert(nu).second) << nu;
    h.push_back(rec(nu, power_law(nu)));
  }
  EXPECT_EQ(seen.size(), 12u);
  const auto nu = suggest_next(h, {3, 14}, 0.5, rng);
  EXPECT_TRUE(nu >= 3 && nu <= 14);
}

TEST(Suggest, FlatDrawFallsBackToRandom) {
  // identical scales at two nu values: exponent posterior centred on zero,
  // but the draw is almost never exactly zero; check the fallback directly
  // through the error path of the acquisition step instead.
  expect_code(ErrorCode::ZeroExponent, [] { continuous_minimizer_log(0.0, 0.1, 0.1, 1.0); });
  RandomStream rng(3);
  const auto s = suggest(std::vector<CalibrationRecord>{rec(2, 0.5), rec(20, 0.5)}, {1, 64}, 0.5, rng);
  EXPECT_TRUE(s.nu >= 1 && s.nu <= 64);
  EXPECT_NE(s.nu, 2);
  EXPECT_NE(s.nu, 20);
}

TEST(RunBayesopt, SyntheticOracle) {
  // loss = (s - s0)^2 with s = 2 nu^-0.5, s0 = 1: minimum at nu = 4
  auto oracle = [](std::int64_t nu, std::size_t) {
    LossEvaluation ev;
    ev.record = rec(nu, power_law(nu), std::pow(power_law(nu) - 1.0, 2));
    ev.stochastic_passes = 10;
    ev.reference_passes = 1;
    return ev;
  };
  const auto res = run_bayesopt(oracle, {1, 1024}, 6, 1.0, 3);
  EXPECT_EQ(res.history.size(), 6u);
  EXPECT_EQ(res.trace[0].suggestion.source, "initial_design");
  EXPECT_EQ(res.history[0].nu, 10);
  EXPECT_EQ(res.history[1].nu, 102);
  EXPECT_EQ(res.nu_star, 4);
  EXPECT_EQ(res.stochastic_passes, 60u);
  EXPECT_EQ(res.reference_passes, 6u);
  const std::string lines = trace_jsonl(res.trace);
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 6);
  EXPECT_THROW(run_bayesopt(oracle, {1, 10}, 0, 1.0, 1), Error);
}

TEST(HistoryArgmin, TiesTowardSmallerNu) {
  const std::vector<CalibrationRecord> h{rec(9, 1, 0.2), rec(3, 1, 0.1), rec(5, 1, 0.1), rec(2, 1, 0.3)};
  EXPECT_EQ(history_argmin(h), 3);
  EXPECT_THROW(history_argmin({}), Error);
}

namespace {

const ModelBundle& toy_model() {
  static const ModelBundle m = [] {
    SinusoidSpec spec;
    spec.n = 300;
    spec.noise_sigma = 0.4;
    spec.seed = 2;
    EncoderConfig c;
    c.d_model = 8;
    c.d_ff = 16;
    c.seed = 1;
    return with_stochastic_layers(fit_readout(init_encoder(c), make_sinusoid(spec).cases, 1.0), all_layers(c));
  }();
  return m;
}

std::vector<InputCase> cal_cases() {
  SinusoidSpec spec;
  spec.n = 40;
  spec.noise_sigma = 0.4;
  spec.seed = 77;
  return make_sinusoid(spec).cases;
}

}  // namespace

TEST(CalibrateNu, SingleIteration) {
  const auto cases = cal_cases();
  const auto res = calibrate_nu(toy_model(), {cases, 10, 4}, {1, 64}, 1, 3);
  ASSERT_EQ(res.history.size(), 1u);
  EXPECT_EQ(res.nu_star, res.history[0].nu);
  EXPECT_EQ(res.stochastic_passes, 40u);
  EXPECT_EQ(res.reference_passes, 10u);
}

TEST(CalibrateNu, StaysInDomainAndAuditsArgmin) {
  const auto cases = cal_cases();
  const CalibrationBatch batch{cases, 10, 4};
  const SearchDomain dom{2, 40};
  const auto res = calibrate_nu(toy_model(), batch, dom, 8, 11);
  ASSERT_EQ(res.history.size(), 8u);
  ASSERT_EQ(res.trace.size(), 8u);
  for (const auto& r : res.history) EXPECT_TRUE(dom.contains(r.nu)) << r.nu;
  // replay every recorded evaluation and recompute the argmin
  double best = INFINITY;
  std::int64_t best_nu = 0;
  for (std::size_t k = 0; k < res.history.size(); ++k) {
    const auto& r = res.history[k];
    const auto ev = eval_loss_detailed(toy_model(), batch, Concentration(r.nu), 11, derive_key(11, {stream_tag::kBatch, k}));
    EXPECT_EQ(ev.record.loss_estimate, r.loss_estimate);
    EXPECT_LE(std::abs(ev.terms.total() - ev.record.loss_estimate), 1e-10 * ev.record.loss_estimate);
    if (r.loss_estimate < best || (r.loss_estimate == best && r.nu < best_nu)) {
      best = r.loss_estimate;
      best_nu = r.nu;
    }
  }
  EXPECT_EQ(res.nu_star, best_nu);
  EXPECT_NEAR(res.s0, residual_scale(toy_model(), cases), 0.0);
  const auto again = calibrate_nu(toy_model(), batch, dom, 8, 11);
  EXPECT_EQ(again.nu_star, res.nu_star);
  EXPECT_EQ(trace_jsonl(again.trace), trace_jsonl(res.trace));
}

TEST(CalibrateNu, SingletonDomain) {
  const auto cases = cal_cases();
  const auto res = calibrate_nu(toy_model(), {cases, 5, 3}, {9, 9}, 3, 1);
  EXPECT_EQ(res.nu_star, 9);
  for (const auto& r : res.history) EXPECT_EQ(r.nu, 9);
}
