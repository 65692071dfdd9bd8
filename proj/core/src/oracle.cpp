#include "dacdm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dacdm/error.hpp"

namespace dacdm {

void GaussianSpec::validate() const {
  if (dim < 1) throw ConfigError("gaussian spec needs dim >= 1");
  if (cells.empty()) throw ConfigError("gaussian spec has no cells");
  double sums[2] = {0.0, 0.0};
  for (const auto& c : cells) {
    if (c.domain != 0 && c.domain != 1) throw ConfigError("gaussian cell domain must be 0 or 1");
    if (c.cls < 0 || c.cls >= num_classes) throw ConfigError("gaussian cell class out of range");
    if (static_cast<int>(c.mean.size()) != dim) throw ShapeError("gaussian cell mean width differs from dim");
    if (!(c.variance > 0.0) || !std::isfinite(c.variance)) throw ConfigError("gaussian cell variance must be > 0");
    if (!(c.weight >= 0.0)) throw ConfigError("gaussian cell weight must be >= 0");
    sums[c.domain] += c.weight;
  }
  for (int d = 0; d < 2; ++d)
    if (has_domain(d) && std::abs(sums[d] - 1.0) > 1e-9) throw ConfigError("cell weights must sum to 1 per domain");
  if (!(domain_prior[0] >= 0.0 && domain_prior[1] >= 0.0)) throw ConfigError("domain priors must be >= 0");
}

bool GaussianSpec::has_domain(int domain) const {
  return std::any_of(cells.begin(), cells.end(), [&](const GaussianCell& c) { return c.domain == domain; });
}

GaussianSpec single_gaussian(Vec mean, double variance) {
  GaussianSpec spec;
  spec.dim = static_cast<int>(mean.size());
  spec.cells.push_back({kSourceLabel, 0, std::move(mean), variance, 1.0});
  spec.domain_prior[0] = 1.0;
  spec.domain_prior[1] = 0.0;
  spec.validate();
  return spec;
}

GaussianSpec gaussian_spec(const GaussianDomains& cfg) {
  GaussianSpec spec;
  spec.dim = static_cast<int>(cfg.mu_source.size());
  spec.num_classes = cfg.num_classes();
  const auto counts = cfg.class_counts();
  double total = 0.0;
  for (int n : counts) total += n;
  for (int d = 0; d < 2; ++d) {
    const Domain dom = d == kSourceLabel ? Domain::Source : Domain::Target;
    for (int c = 0; c < spec.num_classes; ++c)
      spec.cells.push_back({d, c, cfg.cell_mean(dom, c), cfg.variance, counts[c] / total});
  }
  spec.validate();
  return spec;
}

std::vector<NoisyComponent> noisy_components(const GaussianSpec& spec, double alpha_bar, int domain, int cls) {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) throw ConfigError("alpha_bar must lie in (0, 1]");
  const double root = std::sqrt(alpha_bar);
  std::vector<NoisyComponent> out;
  for (const auto& c : spec.cells) {
    if (domain >= 0 && c.domain != domain) continue;
    if (cls >= 0 && spec.num_classes > 1 && c.cls != cls) continue;
    const double w = spec.domain_prior[c.domain] * c.weight;
    if (w <= 0.0) continue;
    NoisyComponent nc;
    nc.mean = c.mean;
    for (auto& m : nc.mean) m *= root;
    nc.variance = alpha_bar * c.variance + (1.0 - alpha_bar);
    nc.weight = w;
    nc.domain = c.domain;
    out.push_back(std::move(nc));
  }
  if (out.empty()) throw ConfigError("no gaussian cell matches the selection");
  return out;
}

namespace {

double component_log_term(const NoisyComponent& c, std::span<const double> x) {
  double sq = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - c.mean[j]) * (x[j] - c.mean[j]);
  const double d = static_cast<double>(x.size());
  return std::log(c.weight) - 0.5 * d * std::log(2.0 * std::numbers::pi * c.variance) - 0.5 * sq / c.variance;
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

/// Responsibilities and the responsibility-weighted score over comps.
Vec weighted_score(std::span<const NoisyComponent> comps, std::span<const double> x) {
  Vec logs(comps.size());
  for (std::size_t k = 0; k < comps.size(); ++k) logs[k] = component_log_term(comps[k], x);
  const double norm = log_sum_exp(logs);
  Vec score(x.size(), 0.0);
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const double r = std::exp(logs[k] - norm);
    for (std::size_t j = 0; j < x.size(); ++j) score[j] -= r * (x[j] - comps[k].mean[j]) / comps[k].variance;
  }
  return score;
}

void check_width(const GaussianSpec& spec, std::span<const double> x) {
  if (static_cast<int>(x.size()) != spec.dim) throw ShapeError("input width differs from gaussian spec dim");
}

}  // namespace

double mixture_log_density(std::span<const NoisyComponent> comps, std::span<const double> x) {
  Vec logs(comps.size());
  for (std::size_t k = 0; k < comps.size(); ++k) logs[k] = component_log_term(comps[k], x);
  return log_sum_exp(logs);
}

Vec mixture_score(std::span<const NoisyComponent> comps, std::span<const double> x) { return weighted_score(comps, x); }

Vec mixture_eps(const GaussianSpec& spec, std::span<const double> x_t, double alpha_bar, int domain, int cls) {
  check_width(spec, x_t);
  Vec eps = mixture_score(noisy_components(spec, alpha_bar, domain, cls), x_t);
  const double scale = -std::sqrt(1.0 - alpha_bar);
  for (auto& e : eps) e *= scale;
  return eps;
}

Vec oracle_eps(const GaussianSpec& spec, std::span<const double> x_t, int t, const NoiseSchedule& sched, int domain,
               int cls) {
  check_width(spec, x_t);
  const double a = sched.alpha_bar(t);
  const auto comps = noisy_components(spec, a, domain, cls);
  if (comps.size() != 1) throw ConfigError("oracle_eps needs a single Gaussian cell; selection is a mixture");
  const auto& c = comps.front();
  Vec eps(x_t.size());
  const double k = std::sqrt(1.0 - a) / c.variance;
  for (std::size_t j = 0; j < eps.size(); ++j) eps[j] = k * (x_t[j] - c.mean[j]);
  return eps;
}

double domain_log_posterior(const GaussianSpec& spec, std::span<const double> x_t, double alpha_bar, int domain) {
  check_width(spec, x_t);
  const auto all = noisy_components(spec, alpha_bar);
  std::vector<NoisyComponent> mine;
  for (const auto& c : all)
    if (c.domain == domain) mine.push_back(c);
  if (mine.empty()) return -std::numeric_limits<double>::infinity();
  return mixture_log_density(mine, x_t) - mixture_log_density(all, x_t);
}

Vec grad_domain_log_posterior(const GaussianSpec& spec, std::span<const double> x_t, double alpha_bar, int domain) {
  check_width(spec, x_t);
  const auto all = noisy_components(spec, alpha_bar);
  std::vector<NoisyComponent> mine;
  for (const auto& c : all)
    if (c.domain == domain) mine.push_back(c);
  if (mine.empty()) throw ConfigError("domain has no gaussian cells");
  Vec g = weighted_score(mine, x_t);
  axpy(-1.0, weighted_score(all, x_t), g);
  return g;
}

Vec oracle_guided_eps(const GaussianSpec& spec, std::span<const double> x_t, int t, const NoiseSchedule& sched,
                      double scale, int target_domain, int cls, GuidanceRule rule) {
  const double a = sched.alpha_bar(t);
  Vec eps = mixture_eps(spec, x_t, a, -1, cls);
  if (scale == 0.0) return eps;
  const Vec g = grad_domain_log_posterior(spec, x_t, a, target_domain);
  axpy(-scale * guidance_coefficient(rule, sched, t), g, eps);
  return eps;
}

Vec oracle_ode_endpoint(const GaussianSpec& spec, std::span<const double> x_from, const NoiseSchedule& sched,
                        int t_from, int t_to, int domain, int cls) {
  check_width(spec, x_from);
  const double a_from = sched.alpha_bar(t_from), a_to = sched.alpha_bar(t_to);
  const auto from = noisy_components(spec, a_from, domain, cls);
  if (from.size() != 1) throw ConfigError("oracle_ode_endpoint needs a single Gaussian cell");
  const auto to = noisy_components(spec, a_to, domain, cls);
  const double ratio = std::sqrt(to.front().variance / from.front().variance);
  Vec x(x_from.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    x[j] = to.front().mean[j] + ratio * (x_from[j] - from.front().mean[j]);
  return x;
}

Vec integrate_ode_heun(const ContinuousEps& eps, std::span<const double> x_from, double lambda_from,
                       double lambda_to, int steps) {
  if (steps < 1) throw ConfigError("integrator needs at least one step");
  auto alpha_bar_of = [](double lam) { return 1.0 / (1.0 + std::exp(-2.0 * lam)); };
  // y = x / sqrt(a); dy/dlambda = -exp(-lambda) eps(x, a)
  auto rhs = [&](std::span<const double> y, double lam) {
    const double a = alpha_bar_of(lam);
    const double root = std::sqrt(a);
    Vec x(y.begin(), y.end());
    for (auto& v : x) v *= root;
    Vec e = eps(x, a);
    const double k = -std::exp(-lam);
    for (auto& v : e) v *= k;
    return e;
  };
  const double h = (lambda_to - lambda_from) / steps;
  Vec y(x_from.begin(), x_from.end());
  const double r0 = 1.0 / std::sqrt(alpha_bar_of(lambda_from));
  for (auto& v : y) v *= r0;
  for (int i = 0; i < steps; ++i) {
    const double lam = lambda_from + i * h;
    const Vec k1 = rhs(y, lam);
    Vec y1 = y;
    axpy(h, k1, y1);
    const Vec k2 = rhs(y1, lam + h);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += 0.5 * h * (k1[j] + k2[j]);
  }
  const double r1 = std::sqrt(alpha_bar_of(lambda_to));
  for (auto& v : y) v *= r1;
  return y;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double oracle_bayes_domain_error(const GaussianSpec& spec, double alpha_bar) {
  const auto src = noisy_components(spec, alpha_bar, kSourceLabel);
  const auto tgt = noisy_components(spec, alpha_bar, kTargetLabel);
  if (src.size() != 1 || tgt.size() != 1) throw ConfigError("bayes domain error needs one gaussian per domain");
  if (src.front().variance != tgt.front().variance) throw ConfigError("bayes domain error needs equal variances");
  const double ps = spec.domain_prior[0] / (spec.domain_prior[0] + spec.domain_prior[1]);
  const double pt = 1.0 - ps;
  double delta2 = 0.0;
  for (std::size_t j = 0; j < src.front().mean.size(); ++j) {
    const double d = tgt.front().mean[j] - src.front().mean[j];
    delta2 += d * d;
  }
  const double delta = std::sqrt(delta2);
  if (delta == 0.0) return std::min(ps, pt);
  if (ps == 0.0 || pt == 0.0) return 0.0;
  const double sd = std::sqrt(src.front().variance);
  // Decide target when the projection onto the mean difference, measured from the source mean, exceeds tau.
  const double tau = 0.5 * delta + (src.front().variance / delta) * std::log(ps / pt);
  return ps * (1.0 - normal_cdf(tau / sd)) + pt * normal_cdf((tau - delta) / sd);
}

OracleNoisePredictor::OracleNoisePredictor(GaussianSpec spec, const NoiseSchedule& sched, bool class_conditioned)
    : spec_(std::move(spec)), sched_(sched), class_conditioned_(class_conditioned) {
  spec_.validate();
}

Vec OracleNoisePredictor::predict_noise(std::span<const double> x_t, int t, const Condition& c) const {
  return mixture_eps(spec_, x_t, sched_.alpha_bar(t), c.domain, class_conditioned_ ? c.cls : -1);
}

BayesDomainClassifier::BayesDomainClassifier(GaussianSpec spec, const NoiseSchedule& sched)
    : spec_(std::move(spec)), sched_(sched) {
  spec_.validate();
  if (!spec_.has_domain(0) || !spec_.has_domain(1)) throw ConfigError("bayes domain classifier needs both domains");
}

Vec BayesDomainClassifier::log_probs(std::span<const double> x_t, int t) const {
  const double a = sched_.alpha_bar(t);
  return {domain_log_posterior(spec_, x_t, a, 0), domain_log_posterior(spec_, x_t, a, 1)};
}

Vec BayesDomainClassifier::grad_log_prob(std::span<const double> x_t, int t, int label) const {
  if (label != 0 && label != 1) throw ConfigError("domain label must be 0 or 1");
  return grad_domain_log_posterior(spec_, x_t, sched_.alpha_bar(t), label);
}

}  // namespace dacdm
