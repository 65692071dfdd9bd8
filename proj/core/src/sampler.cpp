#include "dacdm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "dacdm/error.hpp"
#include "dacdm/rng.hpp"

namespace dacdm {

SolverPlan make_plan(const NoiseSchedule& sched, int steps) {
  const int T = sched.steps();
  if (steps < 1 || steps > T - 1) throw ConfigError("solver steps must lie in [1, T - 1]");
  SolverPlan plan;
  plan.steps = steps;
  plan.timesteps.resize(static_cast<std::size_t>(steps) + 1);
  const double lam_start = sched.lambda(T), lam_end = sched.lambda(1);
  plan.timesteps[0] = T;
  for (int i = 1; i <= steps; ++i) {
    const double target = lam_start + (lam_end - lam_start) * i / steps;
    // lambda decreases in t, so the nearest grid point is found by binary search on t.
    int lo = 1, hi = T;
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (sched.lambda(mid) > target) lo = mid + 1;
      else hi = mid;
    }
    int t = lo;
    if (t > 1 && std::abs(sched.lambda(t - 1) - target) <= std::abs(sched.lambda(t) - target)) t = t - 1;
    if (i == steps) t = 1;
    t = std::min(t, plan.timesteps[i - 1] - 1);
    t = std::max(t, steps - i + 1);
    plan.timesteps[static_cast<std::size_t>(i)] = t;
  }
  plan.b.assign(plan.timesteps.size(), 0.0);
  for (int i = 1; i <= steps; ++i)
    plan.b[i] = sched.lambda(plan.timesteps[i]) - sched.lambda(plan.timesteps[i - 1]);
  return plan;
}

SolverFormula parse_solver_formula(const std::string& name) {
  if (name == "validated") return SolverFormula::Validated;
  if (name == "paper") return SolverFormula::Paper;
  if (name == "first_order") return SolverFormula::FirstOrder;
  throw ConfigError("unknown solver formula '" + name + "'");
}

std::string solver_formula_name(SolverFormula f) {
  switch (f) {
    case SolverFormula::Validated: return "validated";
    case SolverFormula::Paper: return "paper";
    case SolverFormula::FirstOrder: return "first_order";
  }
  return "validated";
}

Vec predict_x0(const NoiseSchedule& sched, std::span<const double> x_t, int t, std::span<const double> eps) {
  const double s = sched.sqrt_one_minus_alpha_bar(t), a = sched.sqrt_alpha_bar(t);
  Vec out(x_t.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (x_t[j] - s * eps[j]) / a;
  return out;
}

namespace {

void check_state(std::span<const double> x, int step) {
  if (!all_finite(x)) throw NumericError("non-finite solver state at step " + std::to_string(step));
}

}  // namespace

Vec dpm_solverpp_solve(const NoisePredictor& model, const NoiseSchedule& sched, const SolverPlan& plan,
                       std::span<const double> x_T, const Condition& c, SolverFormula formula,
                       double x0_clip) {
  if (!(x0_clip >= 0.0)) throw ConfigError("x0 clip must be >= 0");
  if (plan.steps < 1 || plan.timesteps.size() != static_cast<std::size_t>(plan.steps) + 1)
    throw ConfigError("malformed solver plan");
  if (static_cast<int>(x_T.size()) != model.dim()) throw ShapeError("x_T width differs from model");
  Vec x(x_T.begin(), x_T.end());
  check_state(x, 0);
  Vec x0_prev, x0_prev2;
  for (int i = 1; i <= plan.steps; ++i) {
    const int t_prev = plan.timesteps[i - 1], t_cur = plan.timesteps[i];
    const double h = plan.b[i];
    const double sigma_ratio = sched.sqrt_one_minus_alpha_bar(t_cur) / sched.sqrt_one_minus_alpha_bar(t_prev);
    const Vec eps = model.predict_noise(x, t_prev, c);
    x0_prev2 = std::move(x0_prev);
    x0_prev = predict_x0(sched, x, t_prev, eps);
    if (x0_clip > 0.0)
      for (double& v : x0_prev) v = std::clamp(v, -x0_clip, x0_clip);
    Vec next(x.size());
    if (formula == SolverFormula::Paper && i == 1) {
      const double a = sched.sqrt_alpha_bar(t_cur);
      const double k = sched.sqrt_one_minus_alpha_bar(t_cur) / a;
      const double coef = a * (1.0 - std::exp(-h));
      for (std::size_t j = 0; j < x.size(); ++j) next[j] = sigma_ratio * x[j] + coef * (x[j] - k * eps[j]);
    } else if (formula == SolverFormula::FirstOrder || i == 1) {
      const double coef = -sched.sqrt_alpha_bar(t_cur) * (std::exp(-h) - 1.0);
      for (std::size_t j = 0; j < x.size(); ++j) next[j] = sigma_ratio * x[j] + coef * x0_prev[j];
    } else {
      const double r = h / (2.0 * plan.b[i - 1]);
      const double a = formula == SolverFormula::Paper ? std::sqrt(sched.alpha(t_cur)) : sched.sqrt_alpha_bar(t_cur);
      const double coef = a * (std::exp(-h) - 1.0);
      for (std::size_t j = 0; j < x.size(); ++j)
        next[j] = coef * (r * x0_prev2[j] - (1.0 + r) * x0_prev[j]) + sigma_ratio * x[j];
    }
    x = std::move(next);
    check_state(x, i);
  }
  return x;
}

std::pair<Vec, int> dpm_solverpp_sample(const NoisePredictor& model, const NoisyClassifier* clf,
                                        const GuidanceConfig& gcfg, const NoiseSchedule& sched,
                                        const SolverPlan& plan, const Condition& c, std::uint64_t seed,
                                        SolverFormula formula, double x0_clip) {
  Rng rng(seed);
  const Vec x_T = rng.normal_vec(static_cast<std::size_t>(model.dim()));
  const GuidedPredictor guided(model, sched, {GuidanceTerm{clf, gcfg.target_label, clf ? gcfg.scale : 0.0}}, gcfg.rule);
  return {dpm_solverpp_solve(guided, sched, plan, x_T, c, formula, x0_clip), c.cls};
}

Vec ancestral_solve(const NoisePredictor& model, const NoiseSchedule& sched, std::span<const double> x_T,
                    const Condition& c, Rng& rng) {
  if (static_cast<int>(x_T.size()) != model.dim()) throw ShapeError("x_T width differs from model");
  Vec x(x_T.begin(), x_T.end());
  for (int t = sched.steps(); t >= 1; --t) {
    const Vec eps = model.predict_noise(x, t, c);
    const double inv = 1.0 / std::sqrt(sched.alpha(t));
    const double k = (1.0 - sched.alpha(t)) / sched.sqrt_one_minus_alpha_bar(t);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = inv * (x[j] - k * eps[j]);
    if (t > 1) {
      const double s = sched.sigma(t);
      for (auto& v : x) v += s * rng.normal();
    }
    check_state(x, sched.steps() - t + 1);
  }
  return x;
}

Vec ancestral_sample(const NoisePredictor& model, const NoisyClassifier* clf, const GuidanceConfig& gcfg,
                     const NoiseSchedule& sched, const Condition& c, std::uint64_t seed) {
  Rng rng(seed);
  const Vec x_T = rng.normal_vec(static_cast<std::size_t>(model.dim()));
  const GuidedPredictor guided(model, sched, {GuidanceTerm{clf, gcfg.target_label, clf ? gcfg.scale : 0.0}}, gcfg.rule);
  return ancestral_solve(guided, sched, x_T, c, rng);
}

std::vector<int> per_class_labels(int n, int num_classes) {
  if (num_classes < 1) throw ConfigError("need at least one class");
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(std::max(n, 0)));
  const int base = n / num_classes, extra = n % num_classes;
  for (int k = 0; k < num_classes; ++k)
    for (int i = 0; i < base + (k < extra ? 1 : 0); ++i) labels.push_back(k);
  return labels;
}

DomainDataset generate_dataset(const NoisePredictor& model, int num_classes, const NoiseSchedule& sched,
                               const SolverPlan& plan, const GenerateConfig& cfg) {
  if (cfg.total < 1) throw ConfigError("number of generated samples must be >= 1");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  const int n = cfg.total;
  const std::vector<int> fixed =
      cfg.class_rule == ClassRule::PerClass ? per_class_labels(n, num_classes) : std::vector<int>{};

  DomainDataset out{std::vector<LabeledPoint>(static_cast<std::size_t>(n)), num_classes, model.dim()};
  auto work = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      Rng rng(derive_seed(cfg.seed, "generate/sample", static_cast<std::uint64_t>(i)));
      const int y = cfg.class_rule == ClassRule::PerClass ? fixed[i] : rng.uniform_int(0, num_classes - 1);
      const Vec x_T = rng.normal_vec(static_cast<std::size_t>(model.dim()));
      Vec x = dpm_solverpp_solve(model, sched, plan, x_T, Condition{y, cfg.domain_channel}, cfg.formula,
                                 cfg.x0_clip);
      out.points[static_cast<std::size_t>(i)] = LabeledPoint{std::move(x), y, Domain::Generated};
    }
  };

  const int threads = std::min(cfg.threads, n);
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
      const int begin = static_cast<int>(static_cast<long long>(n) * w / threads);
      const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / threads);
      pool.emplace_back([&, w, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace dacdm
