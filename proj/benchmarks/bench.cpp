#include <benchmark/benchmark.h>

#include "dacdm/diffusion.hpp"
#include "dacdm/guidance.hpp"
#include "dacdm/metrics.hpp"
#include "dacdm/sampler.hpp"
#include "dacdm/uda.hpp"

namespace dacdm {
namespace {

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const std::vector<std::size_t> w{18, width, width, 2};
  const Mlp m = Mlp::random(w, rng);
  const Vec x = rng.normal_vec(18);
  GradBundle grad = m.zero_grad();
  MlpCache cache;
  for (auto _ : state) {
    const Vec y = m.forward(x, cache);
    benchmark::DoNotOptimize(m.backward(cache, y, &grad));
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_DenoiserBatchLoss(benchmark::State& state) {
  const NoiseSchedule sched(100, 1e-3, 0.1);
  Rng rng(2);
  const ConditionedDenoiser m = ConditionedDenoiser::create(DenoiserShape{}, 100, rng);
  std::vector<ConditionedExample> batch;
  std::vector<Vec> eps;
  for (int i = 0; i < 64; ++i) {
    batch.push_back({rng.normal_vec(2), Condition{i % 2, -1}});
    eps.push_back(rng.normal_vec(2));
  }
  auto grad = m.zero_grad();
  for (auto _ : state) {
    grad.set_zero();
    benchmark::DoNotOptimize(conditioned_batch_loss(m, sched, batch, 37, eps, grad));
  }
}
BENCHMARK(BM_DenoiserBatchLoss);

void BM_GuidedSample(benchmark::State& state) {
  const NoiseSchedule sched(100, 1e-3, 0.1);
  Rng rng(3);
  const ConditionedDenoiser den = ConditionedDenoiser::create(DenoiserShape{}, 100, rng);
  const std::vector<std::size_t> w{2 + 16, 32, 32, 2};
  const MlpNoisyClassifier clf(Mlp::random(w, rng), TimeEmbedding{}, 100);
  const SolverPlan plan = make_plan(sched, static_cast<int>(state.range(0)));
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(dpm_solverpp_sample(den, &clf, GuidanceConfig{}, sched, plan, Condition{1, -1}, ++seed));
}
BENCHMARK(BM_GuidedSample)->Arg(10)->Arg(20)->Arg(40);

void BM_HdhDistance(benchmark::State& state) {
  Rng rng(4);
  DomainDataset a{{}, 2, 2}, b{{}, 2, 2};
  for (int i = 0; i < 600; ++i) a.points.push_back({rng.normal_vec(2), 0, Domain::Source});
  for (int i = 0; i < 200; ++i) b.points.push_back({rng.normal_vec(2), 0, Domain::Target});
  const auto n = static_cast<int>(state.range(0));
  const HypothesisGrid grid = make_grid(2, 3.0, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(hdh_distance(a, b, grid));
}
BENCHMARK(BM_HdhDistance)->Arg(12)->Arg(24);

void BM_UdaStep(benchmark::State& state) {
  Rng rng(5);
  UdaConfig cfg;
  cfg.regularizer = state.range(0) == 0 ? Regularizer::DomainAdversarial : Regularizer::ClassConfusion;
  const TaskModel m = TaskModel::create(2, 2, cfg, rng);
  std::vector<LabeledPoint> lb, tb;
  for (int i = 0; i < cfg.batch_size; ++i) {
    lb.push_back({rng.normal_vec(2), i % 2, Domain::Source});
    tb.push_back({rng.normal_vec(2), -1, Domain::Target});
  }
  auto grad = m.zero_grad();
  for (auto _ : state) {
    grad.set_zero();
    benchmark::DoNotOptimize(uda_batch_objective(m, lb, tb, cfg, 1.0, grad));
  }
}
BENCHMARK(BM_UdaStep)->Arg(0)->Arg(1);

}  // namespace
}  // namespace dacdm

BENCHMARK_MAIN();
