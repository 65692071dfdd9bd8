// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset (criterion 10 reruns whatever 5-9 ran).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/support.hpp"
#include "dacdm/diffusion.hpp"
#include "dacdm/guidance.hpp"
#include "dacdm/metrics.hpp"
#include "dacdm/oracle.hpp"
#include "dacdm/pipeline.hpp"
#include "dacdm/sampler.hpp"
#include "dacdm/uda.hpp"

namespace dacdm {
namespace {

using testing::random_mlp;
using testing::random_vec;
using testing::random_widths;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ------------------------------------------------------------ criterion 1

struct FdTally {
  double worst = 0.0;
  int checks = 0;
  void add(double e) {
    worst = std::max(worst, std::isnan(e) ? INFINITY : e);
    ++checks;
  }
};

void fd_mlp(std::uint64_t seed, FdTally& tally) {
  Rng rng(seed);
  const std::size_t in = static_cast<std::size_t>(rng.uniform_int(1, 4));
  const std::size_t out = static_cast<std::size_t>(rng.uniform_int(2, 3));
  Mlp m = random_mlp(rng, random_widths(rng, in, out));
  Vec x = random_vec(rng, in);
  Vec offset = random_vec(rng, m.first_width(), 0.5);
  const int label = rng.uniform_int(0, static_cast<int>(out) - 1);
  // Softmax cross-entropy, the loss of every classifier head and probe.
  auto loss = [&] { return -std::log(softmax(m.predict(x, offset))[static_cast<std::size_t>(label)]); };
  MlpCache cache;
  Vec g = softmax(m.forward(x, cache, offset));
  g[static_cast<std::size_t>(label)] -= 1.0;
  GradBundle grad = m.zero_grad();
  const MlpBackward back = m.backward(cache, g, &grad);
  tally.add(finite_diff_max_rel_error(m.coordinates(), std::as_const(grad).coordinates(), loss));
  tally.add(finite_diff_max_rel_error({std::span<double>(x)}, {std::span<const double>(back.input_grad)}, loss));
  tally.add(finite_diff_max_rel_error({std::span<double>(offset)}, {std::span<const double>(back.offset_grad)}, loss));
}

void fd_denoiser(std::uint64_t seed, FdTally& tally) {
  const NoiseSchedule sched(20, 1e-3, 0.1);
  for (Conditioning mode : {Conditioning::Class, Conditioning::ClassAndDomain, Conditioning::Domain}) {
    Rng rng(seed);
    DenoiserShape shape;
    shape.hidden = {5, 4};
    shape.time_embed = {4, 10.0};
    shape.conditioning = mode;
    ConditionedDenoiser m = ConditionedDenoiser::create(shape, 20, rng);
    std::vector<ConditionedExample> batch;
    std::vector<Vec> eps;
    for (int i = 0; i < 3; ++i) {
      const int cls = mode == Conditioning::Domain ? 0 : rng.uniform_int(0, 1);
      const int dom = mode == Conditioning::Class ? -1 : rng.uniform_int(0, 1);
      batch.push_back({random_vec(rng, 2), Condition{cls, dom}});
      eps.push_back(random_vec(rng, 2));
    }
    const int t = rng.uniform_int(1, 20);
    auto grad = m.zero_grad();
    conditioned_batch_loss(m, sched, batch, t, eps, grad);
    tally.add(finite_diff_max_rel_error(m.coordinates(), grad.coordinates(), [&] {
      auto scratch = m.zero_grad();
      return conditioned_batch_loss(m, sched, batch, t, eps, scratch);
    }));
  }
}

void fd_classifier(std::uint64_t seed, FdTally& tally) {
  Rng rng(seed);
  const std::vector<std::size_t> w{2 + 4, 5, 3};
  MlpNoisyClassifier clf(random_mlp(rng, w), TimeEmbedding{4, 10.0}, 30);
  Vec x = random_vec(rng, 2);
  const int t = rng.uniform_int(1, 30), label = rng.uniform_int(0, 2);
  auto log_p = [&] { return clf.log_probs(x, t)[static_cast<std::size_t>(label)]; };
  const Vec gx = clf.grad_log_prob(x, t, label);
  tally.add(finite_diff_max_rel_error({std::span<double>(x)}, {std::span<const double>(gx)}, log_p));
  GradBundle grad = clf.trunk().zero_grad();
  clf.accumulate_cross_entropy(x, t, label, 1.0, grad);
  tally.add(finite_diff_max_rel_error(clf.mutable_trunk().coordinates(), std::as_const(grad).coordinates(),
                                      [&] { return -log_p(); }));
}

void fd_task_model(std::uint64_t seed, FdTally& tally) {
  for (Regularizer r : {Regularizer::DomainAdversarial, Regularizer::ClassConfusion, Regularizer::None}) {
    Rng rng(seed);
    UdaConfig cfg;
    cfg.regularizer = r;
    cfg.feature_hidden = {5};
    cfg.feature_dim = 4;
    cfg.domain_hidden = {3};
    cfg.tradeoff = 0.7;
    TaskModel m = TaskModel::create(2, 3, cfg, rng);
    std::vector<LabeledPoint> lb, tb;
    for (int i = 0; i < 4; ++i) lb.push_back({random_vec(rng, 2), rng.uniform_int(0, 2), Domain::Source});
    for (int i = 0; i < 5; ++i) tb.push_back({random_vec(rng, 2), -1, Domain::Target});
    const double adv = 0.2 + 0.8 * rng.uniform();
    auto grad = m.zero_grad();
    uda_batch_objective(m, lb, tb, cfg, adv, grad);
    auto eval = [&] {
      auto scratch = m.zero_grad();
      return uda_batch_objective(m, lb, tb, cfg, adv, scratch);
    };
    // Parameter groups: extractor, label head, domain head. Under gradient
    // reversal each group descends its own objective.
    const std::size_t n0 = 2 * m.extractor().num_layers(), n1 = 2 * m.label_head().num_layers();
    auto params = m.coordinates();
    auto grads = grad.coordinates();
    std::vector<std::span<double>> p[3];
    std::vector<std::span<const double>> g[3];
    for (std::size_t i = 0; i < params.size(); ++i) {
      const int k = i < n0 ? 0 : i < n0 + n1 ? 1 : 2;
      p[k].push_back(params[i]);
      g[k].push_back(grads[i]);
    }
    const double b = cfg.tradeoff;
    if (r == Regularizer::DomainAdversarial) {
      tally.add(finite_diff_max_rel_error(p[0], g[0], [&] {
        const auto o = eval();
        return o.task_loss - adv * b * o.reg_loss;
      }));
      tally.add(finite_diff_max_rel_error(p[1], g[1], [&] { return eval().task_loss; }));
      tally.add(finite_diff_max_rel_error(p[2], g[2], [&] { return b * eval().reg_loss; }));
    } else {
      auto total = [&] {
        const auto o = eval();
        return o.task_loss + (r == Regularizer::None ? 0.0 : b * o.reg_loss);
      };
      tally.add(finite_diff_max_rel_error(p[0], g[0], total));
      tally.add(finite_diff_max_rel_error(p[1], g[1], total));
    }
  }
}

Verdict gradient_integrity() {
  FdTally mlp, den, clf, task;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    fd_mlp(seed, mlp);
    fd_denoiser(seed, den);
    fd_classifier(seed, clf);
    fd_task_model(seed, task);
  }
  const double worst = std::max({mlp.worst, den.worst, clf.worst, task.worst});
  return {worst <= 1e-5, fmt("max rel err %.2e (mlp %.1e, denoiser %.1e, classifier %.1e, task model %.1e), %d checks "
                             "over 20 seeds",
                             worst, mlp.worst, den.worst, clf.worst, task.worst,
                             mlp.checks + den.checks + clf.checks + task.checks)};
}

// ------------------------------------------------------------ criterion 2

Verdict denoiser_convergence() {
  const Vec mu{1.0, -0.5};
  const double var = 0.25;
  const GaussianSpec spec = single_gaussian(mu, var);
  const ExperimentConfig defaults;
  const NoiseSchedule sched(100, defaults.beta_start, defaults.beta_end);

  Rng data_rng(11);
  std::vector<ConditionedExample> pool;
  for (int i = 0; i < 2000; ++i) {
    Vec x = mu;
    for (auto& v : x) v += std::sqrt(var) * data_rng.normal();
    pool.push_back({std::move(x), Condition{0, -1}});
  }
  // Held-out noisy batch: fresh x_0, t and eps.
  Rng eval_rng(12);
  std::vector<std::pair<Vec, int>> held_out;
  for (int i = 0; i < 2000; ++i) {
    Vec x = mu;
    for (auto& v : x) v += std::sqrt(var) * eval_rng.normal();
    const int t = eval_rng.uniform_int(1, 100);
    held_out.emplace_back(forward_noise(sched, x, t, eval_rng.normal_vec(2)), t);
  }
  auto deviation = [&](const ConditionedDenoiser& m) {
    double s = 0.0;
    for (const auto& [x, t] : held_out) {
      const Vec a = m.predict_noise(x, t, Condition{0, -1});
      const Vec b = oracle_eps(spec, x, t, sched);
      for (int j = 0; j < 2; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    }
    return s / static_cast<double>(held_out.size());
  };

  DiffusionTrainConfig cfg = defaults.diffusion;
  cfg.shape.dim = 2;
  cfg.shape.num_classes = 1;
  cfg.seed = 13;
  std::vector<double> curve;
  for (int iters : {0, cfg.iterations / 10, cfg.iterations}) {
    DiffusionTrainConfig c = cfg;
    c.iterations = iters;
    curve.push_back(deviation(train_denoiser(pool, sched, c).model));
  }
  return {curve[2] < curve[0] && curve[2] <= 0.05,
          fmt("mean squared deviation from oracle %.4f -> %.4f -> %.4f (0, %d, %d iterations), tolerance 0.05",
              curve[0], curve[1], curve[2], cfg.iterations / 10, cfg.iterations)};
}

// ------------------------------------------------------------ criterion 3

Verdict sampler_order() {
  const GaussianSpec spec = single_gaussian({1.0, -1.0}, 0.25);
  const NoiseSchedule sched(1000, 1e-4, 0.02);
  const OracleNoisePredictor oracle(spec, sched);
  Rng rng(21);
  std::vector<Vec> starts;
  for (int i = 0; i < 50; ++i) starts.push_back(rng.normal_vec(2));
  auto error = [&](int M, SolverFormula f) {
    const SolverPlan plan = make_plan(sched, M);
    double s = 0.0;
    for (const auto& xT : starts) {
      const Vec exact = oracle_ode_endpoint(spec, xT, sched, sched.steps(), 1);
      const Vec x = dpm_solverpp_solve(oracle, sched, plan, xT, Condition{0, -1}, f);
      s += std::sqrt((x[0] - exact[0]) * (x[0] - exact[0]) + (x[1] - exact[1]) * (x[1] - exact[1]));
    }
    return s / static_cast<double>(starts.size());
  };
  const double v5 = error(5, SolverFormula::Validated), v10 = error(10, SolverFormula::Validated),
               v20 = error(20, SolverFormula::Validated);
  const double f5 = error(5, SolverFormula::FirstOrder), f10 = error(10, SolverFormula::FirstOrder),
               f20 = error(20, SolverFormula::FirstOrder);
  const double r1 = v5 / v10, r2 = v10 / v20, q1 = f5 / f10, q2 = f10 / f20;
  const bool ok = r1 >= 3.0 && r2 >= 3.0 && q1 >= 1.5 && q1 <= 2.5 && q2 >= 1.5 && q2 <= 2.5;
  return {ok, fmt("second-order ratios %.2f, %.2f (>= 3); first-order ratios %.2f, %.2f (in [1.5, 2.5]); "
                  "errors %.2e/%.2e/%.2e",
                  r1, r2, q1, q2, v5, v10, v20)};
}

// ------------------------------------------------------------ criterion 4

Verdict guidance_correctness() {
  GaussianDomains g;
  g.mu_source = {0.0, 0.0};
  g.mu_target = {3.0, 0.0};
  g.class_offsets = {{0.0, -1.5}, {0.0, 1.5}};
  g.variance = 0.5;
  const GaussianSpec two_class = gaussian_spec(g);
  const ExperimentConfig defaults;
  const NoiseSchedule sched(100, defaults.beta_start, defaults.beta_end);

  // Oracle level: Bayes classifier in place of the learned one.
  const OracleNoisePredictor eps(two_class, sched);
  const BayesDomainClassifier bayes(two_class, sched);
  Rng rng(31);
  double worst = 0.0;
  for (GuidanceRule rule : {GuidanceRule::SqrtOneMinusAlphaBar, GuidanceRule::SigmaT}) {
    for (int i = 0; i < 200; ++i) {
      const Vec x = random_vec(rng, 2, 2.0);
      const int t = rng.uniform_int(1, 100), c = rng.uniform_int(0, 1);
      const double s = 3.0 * rng.uniform();
      const Vec got = guided_noise(eps, &bayes, GuidanceConfig{s, kTargetLabel, rule}, sched, x, t, Condition{c, -1});
      const Vec want = oracle_guided_eps(two_class, x, t, sched, s, kTargetLabel, c, rule);
      for (int j = 0; j < 2; ++j) worst = std::max(worst, relative_error(got[j], want[j]));
    }
  }

  // Learned classifier steering the exact domain-pooled denoiser; samples are
  // labelled by the clean-data Bayes rule.
  GaussianDomains one = g;
  one.class_offsets.clear();
  one.n_per_domain = 400;
  const GaussianSpec spec = gaussian_spec(one);
  const OracleNoisePredictor pooled(spec, sched, false);
  const SolverPlan plan = make_plan(sched, defaults.solver_steps);
  double frac[2] = {0.0, 0.0};
  const int n = 400;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto [source, target] = gen_gaussian_domains(one, seed);
    ClassifierTrainConfig ccfg = defaults.classifier;
    ccfg.seed = seed;
    const MlpNoisyClassifier clf = train_domain_classifier(source, target, sched, ccfg).classifier;
    for (int k = 0; k < 2; ++k) {
      const GuidedPredictor guided(pooled, sched, {GuidanceTerm{&clf, kTargetLabel, k == 0 ? 0.0 : 1.0}});
      GenerateConfig gcfg;
      gcfg.total = n;
      gcfg.seed = derive_seed(seed, "acceptance/guided");
      const DomainDataset out = generate_dataset(guided, 1, sched, plan, gcfg);
      int hits = 0;
      for (const auto& p : out.points) hits += domain_log_posterior(spec, p.x, 1.0, kTargetLabel) > std::log(0.5);
      frac[k] += hits / (5.0 * n);
    }
  }
  const bool ok = worst <= 1e-6 && frac[1] >= 0.9 && std::abs(frac[0] - 0.5) <= 0.05;
  return {ok, fmt("oracle rel err %.2e (<= 1e-6); target-classified %.1f%% at s=1 (>= 90%%), %.1f%% at s=0 "
                  "(50 +- 5%%), mean of 5 seeds",
                  worst, 100.0 * frac[1], 100.0 * frac[0])};
}

// ------------------------------------------------------------ criteria 5-10

/// Memoised pipeline runs keyed by config hash; all share one stage cache.
class Suite {
 public:
  RunManifest run(const ExperimentConfig& cfg) {
    const std::string key = cfg.hash();
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    RunManifest m = run_pipeline(cfg, RunOptions{{}, &cache_});
    if (!m.ok) std::fprintf(stderr, "run %s seed %llu failed in %s: %s\n", variant_name(cfg.variant).c_str(),
                            static_cast<unsigned long long>(cfg.seed), m.failed_stage.c_str(), m.error.c_str());
    order_.push_back(key);
    return runs_.emplace(key, std::move(m)).first->second;
  }

  /// Runs cfg over its seed list; returns the manifests in seed order.
  std::vector<RunManifest> seeds(ExperimentConfig cfg) {
    std::vector<RunManifest> out;
    for (auto s : std::vector<std::uint64_t>(cfg.seeds)) {
      cfg.seed = s;
      out.push_back(run(cfg));
    }
    return out;
  }

  /// Metric CSVs of every run, in execution order.
  std::vector<std::pair<std::string, std::string>> csvs() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& key : order_) {
      std::ostringstream s;
      write_metrics_csv(runs_.at(key), s);
      out.emplace_back(key, s.str());
    }
    return out;
  }

  const std::vector<std::string>& order() const { return order_; }
  const RunManifest& at(const std::string& key) const { return runs_.at(key); }
  const std::map<std::string, ExperimentConfig>& configs() const { return configs_; }
  void remember(const ExperimentConfig& cfg) { configs_[cfg.hash()] = cfg; }

 private:
  StageCache cache_;
  std::map<std::string, RunManifest> runs_;
  std::map<std::string, ExperimentConfig> configs_;
  std::vector<std::string> order_;
};

ExperimentConfig standard(Variant v, Regularizer r = Regularizer::DomainAdversarial) {
  ExperimentConfig cfg;
  cfg.variant = v;
  cfg.uda.regularizer = r;
  return cfg;
}

double mean_of(const std::vector<RunManifest>& runs, const std::string& key) {
  double s = 0.0;
  for (const auto& m : runs) s += m.ok ? m.metric(key) : std::nan("");
  return s / static_cast<double>(runs.size());
}

double mean_a_distance(const std::vector<RunManifest>& runs, const std::string& pair) {
  double s = 0.0;
  for (const auto& m : runs) {
    double v = std::nan("");
    for (const auto& [name, d] : m.a_distances)
      if (name == pair) v = d;
    s += v;
  }
  return s / static_cast<double>(runs.size());
}

/// Runs every seed of cfg through the suite and records the configs for reruns.
std::vector<RunManifest> runs_of(Suite& suite, ExperimentConfig cfg) {
  for (auto s : cfg.seeds) {
    cfg.seed = s;
    suite.remember(cfg);
  }
  return suite.seeds(cfg);
}

Verdict distance_ordering(Suite& suite) {
  const auto full = runs_of(suite, standard(Variant::Full));
  const double st = mean_a_distance(full, "s_t"), gt = mean_a_distance(full, "g_t"),
               sh = mean_a_distance(full, "shat_t");
  return {st - gt >= 0.1 && st - sh >= 0.1,
          fmt("d_A(s,t) %.3f, d_A(g,t) %.3f, d_A(s_hat,t) %.3f; margins %.3f, %.3f (>= 0.1)", st, gt, sh, st - gt,
              st - sh)};
}

Verdict end_to_end(Suite& suite) {
  std::string detail;
  bool ok = true;
  for (Regularizer r : {Regularizer::DomainAdversarial, Regularizer::ClassConfusion}) {
    const double base = mean_of(runs_of(suite, standard(Variant::Baseline, r)), "target_accuracy");
    const double full = mean_of(runs_of(suite, standard(Variant::Full, r)), "target_accuracy");
    ok = ok && full - base >= 0.02;
    detail += fmt("%s %.2f%% -> %.2f%% (%+.2f points); ", regularizer_name(r).c_str(), 100 * base, 100 * full,
                  100 * (full - base));
  }
  return {ok, detail + "need >= +2 points each"};
}

Verdict ablation_ordering(Suite& suite) {
  const Variant order[] = {Variant::Baseline, Variant::PseudoLabel, Variant::NoDomainGuidance, Variant::GeneratedOnly,
                           Variant::Full};
  std::vector<double> acc;
  std::string detail;
  for (Variant v : order) {
    acc.push_back(mean_of(runs_of(suite, standard(v)), "target_accuracy"));
    detail += fmt("%s %.2f%%, ", variant_name(v).c_str(), 100 * acc.back());
  }
  int inversions = 0;
  double largest = 0.0;
  for (std::size_t i = 0; i + 1 < acc.size(); ++i) {
    if (!(acc[i] <= acc[i + 1])) {
      ++inversions;
      largest = std::max(largest, std::isnan(acc[i + 1] - acc[i]) ? INFINITY : acc[i] - acc[i + 1]);
    }
  }
  return {inversions <= 1 && largest <= 0.005,
          detail + fmt("%d inversion(s), largest %.2f points (at most one, <= 0.5)", inversions, 100 * largest)};
}

Verdict sweep_shape(Suite& suite) {
  std::map<int, double> acc;
  for (int n : {0, 50, 200, 400, 800}) {
    ExperimentConfig cfg = standard(Variant::Full);
    cfg.per_class = n;
    acc[n] = mean_of(runs_of(suite, cfg), "target_accuracy");
  }
  const double plateau = std::max({acc[200], acc[400], acc[800]});
  return {acc[50] - acc[0] >= 0.01 && plateau > acc[50],
          fmt("N_g per class 0/50/200/400/800: %.2f/%.2f/%.2f/%.2f/%.2f%%; need 50 >= 0 + 1 point and "
              "max(200, 400, 800) > 50",
              100 * acc[0], 100 * acc[50], 100 * acc[200], 100 * acc[400], 100 * acc[800])};
}

Verdict bound_sanity(Suite& suite) {
  // The Gaussian-domain pipeline joins the two-moons configs.
  for (Variant v : {Variant::Baseline, Variant::Full}) {
    ExperimentConfig cfg = standard(v);
    cfg.data_kind = "gaussian";
    runs_of(suite, cfg);
  }
  int checked = 0, violated = 0, failed = 0;
  double slack = INFINITY;
  for (const auto& key : suite.order()) {
    const RunManifest& m = suite.at(key);
    if (!m.ok || !m.bound) {
      ++failed;
      continue;
    }
    ++checked;
    if (!m.bound->holds()) ++violated;
    slack = std::min(slack, m.bound->rhs - m.bound->lhs);
  }
  return {violated == 0 && failed == 0 && checked > 0,
          fmt("%d runs checked, %d violations, %d without a report; smallest rhs - risk %.3f", checked, violated,
              failed, slack)};
}

Verdict determinism(const Suite& first) {
  Suite again;
  std::size_t same = 0, total = 0;
  std::string first_diff;
  for (const auto& [key, csv] : first.csvs()) {
    ++total;
    again.run(first.configs().at(key));
    std::ostringstream s;
    write_metrics_csv(again.at(key), s);
    if (s.str() == csv) {
      ++same;
    } else if (first_diff.empty()) {
      first_diff = ", first mismatch in config " + key;
    }
  }
  return {total > 0 && same == total,
          fmt("%zu of %zu run metric CSVs bit-identical on rerun with a fresh cache", same, total) + first_diff};
}

}  // namespace
}  // namespace dacdm

int main(int argc, char** argv) {
  using namespace dacdm;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = none stated
    std::function<Verdict()> run;
  };
  Suite suite;
  const std::vector<Criterion> criteria = {
      {1, "gradient integrity", 60, gradient_integrity},
      {2, "optimal-denoiser convergence", 120, denoiser_convergence},
      {3, "sampler order", 60, sampler_order},
      {4, "guidance correctness", 180, guidance_correctness},
      {5, "domain distance ordering", 600, [&] { return distance_ordering(suite); }},
      {6, "end-to-end improvement", 900, [&] { return end_to_end(suite); }},
      {7, "ablation ordering", 1800, [&] { return ablation_ordering(suite); }},
      {9, "N_g sweep shape", 1800, [&] { return sweep_shape(suite); }},
      {8, "bound sanity", 300, [&] { return bound_sanity(suite); }},
      {10, "determinism", 0, [&] { return determinism(suite); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_s == 0 || secs <= c.budget_s;
    const bool pass = v.pass && in_time;
    failures += !pass;
    std::string timing = c.budget_s > 0 ? fmt("%.1f s of %.0f s", secs, c.budget_s) : fmt("%.1f s", secs);
    std::printf("criterion %2d %-30s %s  %s [%s]\n", c.id, c.name, pass ? "PASS" : "FAIL", v.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
