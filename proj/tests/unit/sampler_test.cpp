#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dacdm/error.hpp"
#include "dacdm/oracle.hpp"
#include "dacdm/sampler.hpp"
#include "support.hpp"

namespace dacdm {
namespace {

using testing::random_vec;

class ZeroNoise : public NoisePredictor {
 public:
  Vec predict_noise(std::span<const double> x, int, const Condition&) const override { return Vec(x.size(), 0.0); }
  int dim() const override { return 2; }
};

class AffineNoise : public NoisePredictor {
 public:
  Vec predict_noise(std::span<const double> x, int t, const Condition& c) const override {
    return {0.3 * x[0] - 0.01 * t, 0.5 * x[1] + 0.1 * c.cls};
  }
  int dim() const override { return 2; }
};

class NanNoise : public NoisePredictor {
 public:
  Vec predict_noise(std::span<const double>, int t, const Condition&) const override {
    return {t < 50 ? std::numeric_limits<double>::quiet_NaN() : 0.0, 0.0};
  }
  int dim() const override { return 2; }
};

TEST(Plan, EndpointsMonotoneAndIncrements) {
  const NoiseSchedule sched(100, 1e-3, 0.1);
  for (int M = 1; M <= 99; ++M) {
    const SolverPlan p = make_plan(sched, M);
    ASSERT_EQ(p.timesteps.size(), static_cast<std::size_t>(M) + 1);
    EXPECT_EQ(p.timesteps.front(), 100);
    EXPECT_EQ(p.timesteps.back(), 1);
    double total = 0.0;
    for (int i = 1; i <= M; ++i) {
      EXPECT_LT(p.timesteps[i], p.timesteps[i - 1]);
      EXPECT_GT(p.b[i], 0.0);
      total += p.b[i];
    }
    EXPECT_NEAR(total, sched.lambda(1) - sched.lambda(100), 1e-12);
  }
  EXPECT_THROW(make_plan(sched, 0), ConfigError);
  EXPECT_THROW(make_plan(sched, 100), ConfigError);
}

TEST(Plan, NearlyUniformInLogSnr) {
  const NoiseSchedule sched(1000, 1e-4, 0.02);
  const SolverPlan p = make_plan(sched, 10);
  const double step = (sched.lambda(1) - sched.lambda(1000)) / 10;
  for (int i = 1; i <= 10; ++i) EXPECT_NEAR(p.b[i], step, 0.1 * step);
}

TEST(Solver, SingleStepHandFormula) {
  const NoiseSchedule sched(50, 1e-3, 0.2);
  const SolverPlan plan = make_plan(sched, 1);
  const AffineNoise model;
  const Vec xT{0.7, -1.2};
  const Condition c{1, -1};
  const Vec eps = model.predict_noise(xT, 50, c);
  const double a0 = sched.sqrt_alpha_bar(50), s0 = sched.sqrt_one_minus_alpha_bar(50);
  const double a1 = sched.sqrt_alpha_bar(1), s1 = sched.sqrt_one_minus_alpha_bar(1);
  const double h = sched.lambda(1) - sched.lambda(50);
  for (auto f : {SolverFormula::Validated, SolverFormula::FirstOrder}) {
    const Vec x = dpm_solverpp_solve(model, sched, plan, xT, c, f);
    for (int j = 0; j < 2; ++j) {
      const double x0 = (xT[j] - s0 * eps[j]) / a0;
      EXPECT_NEAR(x[j], s1 / s0 * xT[j] - a1 * (std::exp(-h) - 1.0) * x0, 1e-10);
    }
  }
  const Vec xp = dpm_solverpp_solve(model, sched, plan, xT, c, SolverFormula::Paper);
  for (int j = 0; j < 2; ++j)
    EXPECT_NEAR(xp[j], s1 / s0 * xT[j] + a1 * (1.0 - std::exp(-h)) * (xT[j] - s1 / a1 * eps[j]), 1e-10);
}

// With eps = 0 the exact flow is x_t = sqrt(a_t / a_T) x_T; both data-prediction
// updates reproduce it for any M.
TEST(Solver, ZeroModelFollowsExactFlow) {
  const NoiseSchedule sched(100, 1e-3, 0.1);
  const ZeroNoise model;
  const Vec xT{0.9, -0.4};
  for (int M : {1, 2, 5, 20}) {
    const SolverPlan plan = make_plan(sched, M);
    const double k = sched.sqrt_alpha_bar(1) / sched.sqrt_alpha_bar(100);
    for (auto f : {SolverFormula::Validated, SolverFormula::FirstOrder}) {
      const Vec x = dpm_solverpp_solve(model, sched, plan, xT, {0, -1}, f);
      for (int j = 0; j < 2; ++j) EXPECT_NEAR(x[j], k * xT[j], 1e-9 * std::abs(k * xT[j]));
    }
  }
}

TEST(Solver, SecondOrderBeatsFirstOrderOnOracle) {
  const GaussianSpec spec = single_gaussian({1.0, -1.0}, 0.25);
  const NoiseSchedule sched(1000, 1e-4, 0.02);
  const OracleNoisePredictor oracle(spec, sched);
  Rng rng(3);
  double e2 = 0.0, e1 = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Vec xT = random_vec(rng, 2);
    const Vec exact = oracle_ode_endpoint(spec, xT, sched, 1000, 1);
    const SolverPlan plan = make_plan(sched, 10);
    e2 += testing::max_abs_diff(dpm_solverpp_solve(oracle, sched, plan, xT, {0, -1}), exact);
    e1 += testing::max_abs_diff(dpm_solverpp_solve(oracle, sched, plan, xT, {0, -1}, SolverFormula::FirstOrder), exact);
  }
  EXPECT_LT(e2, e1 / 3.0);
}

TEST(Solver, NonFiniteStateNamesStep) {
  const NoiseSchedule sched(100, 1e-3, 0.1);
  const NanNoise model;
  try {
    dpm_solverpp_solve(model, sched, make_plan(sched, 10), Vec{0.1, 0.1}, {0, -1});
    FAIL() << "no error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
  EXPECT_THROW(dpm_solverpp_solve(ZeroNoise(), sched, make_plan(sched, 2), Vec{0.1}, {0, -1}), ShapeError);
}

TEST(Solver, DataPredictionClamp) {
  const NoiseSchedule sched(100, 1e-3, 0.1);
  const AffineNoise model;
  const SolverPlan plan = make_plan(sched, 10);
  const Vec xT{2.5, -3.0};
  const Vec free = dpm_solverpp_solve(model, sched, plan, xT, {0, -1});
  EXPECT_EQ(dpm_solverpp_solve(model, sched, plan, xT, {0, -1}, SolverFormula::Validated, 1e9), free);
  const Vec clamped = dpm_solverpp_solve(model, sched, plan, xT, {0, -1}, SolverFormula::Validated, 0.1);
  EXPECT_NE(clamped, free);
  EXPECT_THROW(dpm_solverpp_solve(model, sched, plan, xT, {0, -1}, SolverFormula::Validated, -1.0), ConfigError);
}

TEST(SolverFormula, NamesRoundTrip) {
  for (auto f : {SolverFormula::Validated, SolverFormula::Paper, SolverFormula::FirstOrder})
    EXPECT_EQ(parse_solver_formula(solver_formula_name(f)), f);
  EXPECT_THROW(parse_solver_formula("euler"), ConfigError);
}

TEST(Sampling, GuidanceOffEquivalence) {
  const NoiseSchedule sched(40, 1e-3, 0.2);
  const AffineNoise model;
  const std::vector<std::size_t> w{2 + 16, 3, 2};
  const MlpNoisyClassifier zero(Mlp::zeros(w), TimeEmbedding{}, 40);
  GuidanceConfig off;
  off.scale = 0.0;
  const SolverPlan plan = make_plan(sched, 8);
  const Condition c{1, -1};
  const auto plain = dpm_solverpp_sample(model, nullptr, off, sched, plan, c, 7);
  EXPECT_EQ(dpm_solverpp_sample(model, &zero, off, sched, plan, c, 7), plain);
  EXPECT_EQ(dpm_solverpp_sample(model, &zero, GuidanceConfig{}, sched, plan, c, 7), plain);
  Rng rng(7);
  const Vec xT = rng.normal_vec(2);
  EXPECT_EQ(dpm_solverpp_solve(model, sched, plan, xT, c), plain.first);

  const Vec anc = ancestral_sample(model, nullptr, off, sched, c, 9);
  EXPECT_EQ(ancestral_sample(model, &zero, GuidanceConfig{}, sched, c, 9), anc);
  EXPECT_EQ(ancestral_sample(model, &zero, off, sched, c, 9), anc);
}

TEST(Ancestral, ZeroModelShrinksTowardOrigin) {
  const NoiseSchedule sched(30, 1e-3, 0.3);
  Rng rng(4);
  const Vec out = ancestral_solve(ZeroNoise(), sched, Vec{5.0, -5.0}, {0, -1}, rng);
  EXPECT_TRUE(all_finite(out));
}

TEST(Generate, PerClassLabels) {
  EXPECT_EQ(per_class_labels(7, 3), (std::vector<int>{0, 0, 0, 1, 1, 2, 2}));
  EXPECT_EQ(per_class_labels(0, 2), std::vector<int>{});
  EXPECT_THROW(per_class_labels(3, 0), ConfigError);
}

TEST(Generate, IndependentOfThreadCount) {
  const NoiseSchedule sched(40, 1e-3, 0.2);
  const AffineNoise model;
  const SolverPlan plan = make_plan(sched, 6);
  GenerateConfig cfg;
  cfg.total = 23;
  cfg.seed = 11;
  const DomainDataset one = generate_dataset(model, 2, sched, plan, cfg);
  for (int threads : {2, 3, 8, 64}) {
    cfg.threads = threads;
    EXPECT_EQ(generate_dataset(model, 2, sched, plan, cfg), one);
  }
  EXPECT_EQ(one.count(Domain::Generated), 23u);
  int ones = 0;
  for (const auto& p : one.points) ones += p.y;
  EXPECT_EQ(ones, 11);
  cfg.class_rule = ClassRule::Uniform;
  const DomainDataset uni = generate_dataset(model, 2, sched, plan, cfg);
  cfg.threads = 1;
  EXPECT_EQ(generate_dataset(model, 2, sched, plan, cfg), uni);
  cfg.total = 0;
  EXPECT_THROW(generate_dataset(model, 2, sched, plan, cfg), ConfigError);
}

}  // namespace
}  // namespace dacdm
