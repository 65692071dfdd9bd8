#pragma once

// Closed-form references for isotropic Gaussian data. Every function is pure.

#include <functional>
#include <span>
#include <vector>

#include "dacdm/data.hpp"
#include "dacdm/diffusion.hpp"
#include "dacdm/guidance.hpp"
#include "dacdm/schedule.hpp"

namespace dacdm {

/// N(mean, variance * I) restricted to one (domain, class) cell.
struct GaussianCell {
  int domain = kSourceLabel;
  int cls = 0;
  Vec mean;
  double variance = 1.0;
  /// p(cls | domain)
  double weight = 1.0;
};

struct GaussianSpec {
  int dim = 0;
  int num_classes = 1;
  std::vector<GaussianCell> cells;
  /// p(domain) for domain labels 0 (source) and 1 (target).
  double domain_prior[2] = {0.5, 0.5};

  /// Throws ConfigError on non-positive variance, bad weights or mismatched dims.
  void validate() const;
  bool has_domain(int domain) const;
};

/// Spec for a single Gaussian N(mean, variance * I) placed in the source domain.
GaussianSpec single_gaussian(Vec mean, double variance);
/// Spec matching gen_gaussian_domains(cfg, .) with equal domain priors.
GaussianSpec gaussian_spec(const GaussianDomains& cfg);

/// Mixture component after forward noising to level alpha_bar.
struct NoisyComponent {
  Vec mean;
  double variance = 1.0;
  double weight = 1.0;
  int domain = 0;
};

/// Components of q_t selected by domain (-1 = any) and class (-1 = any), each
/// weighted by p(domain) p(class | domain).
std::vector<NoisyComponent> noisy_components(const GaussianSpec& spec, double alpha_bar, int domain = -1,
                                             int cls = -1);

double mixture_log_density(std::span<const NoisyComponent> comps, std::span<const double> x);
/// grad_x log q(x)
Vec mixture_score(std::span<const NoisyComponent> comps, std::span<const double> x);

/// E[eps | x_t] for the selected cells at a continuous noise level. Works for mixtures.
Vec mixture_eps(const GaussianSpec& spec, std::span<const double> x_t, double alpha_bar, int domain = -1,
                int cls = -1);

/// sqrt(1 - a) (a v + 1 - a)^{-1} (x_t - sqrt(a) mu) for one (domain, class) cell.
/// Throws ConfigError when the selection is not a single Gaussian.
Vec oracle_eps(const GaussianSpec& spec, std::span<const double> x_t, int t, const NoiseSchedule& sched,
               int domain = -1, int cls = -1);

/// log p(domain | x_t) by Bayes over the noisy domain marginals.
double domain_log_posterior(const GaussianSpec& spec, std::span<const double> x_t, double alpha_bar, int domain);
Vec grad_domain_log_posterior(const GaussianSpec& spec, std::span<const double> x_t, double alpha_bar, int domain);

/// eps*(x_t | class cell pooled over domains) - s * coef(t) * grad log p(target | x_t).
Vec oracle_guided_eps(const GaussianSpec& spec, std::span<const double> x_t, int t, const NoiseSchedule& sched,
                      double scale, int target_domain, int cls = -1,
                      GuidanceRule rule = GuidanceRule::SqrtOneMinusAlphaBar);

/// Exact probability-flow ODE solution from (x_T at t_from) to t_to for one Gaussian cell:
/// sqrt(a_to) mu + (s_to / s_from) (x - sqrt(a_from) mu), s = sqrt(a v + 1 - a).
Vec oracle_ode_endpoint(const GaussianSpec& spec, std::span<const double> x_from, const NoiseSchedule& sched,
                        int t_from, int t_to, int domain = -1, int cls = -1);

/// eps as a function of (x, alpha_bar), for continuous-time integration.
using ContinuousEps = std::function<Vec(std::span<const double>, double)>;

/// Heun integration of d(x / sqrt(a)) / d lambda = -exp(-lambda) eps(x, a) with
/// a = sigmoid(2 lambda), over `steps` uniform steps in lambda.
Vec integrate_ode_heun(const ContinuousEps& eps, std::span<const double> x_from, double lambda_from,
                       double lambda_to, int steps);

double normal_cdf(double z);

/// Bayes error between the two single-Gaussian domains at noise level alpha_bar
/// (alpha_bar = 1 is the clean data).
double oracle_bayes_domain_error(const GaussianSpec& spec, double alpha_bar = 1.0);

/// Noise predictor backed by mixture_eps. Condition.cls selects the class cell
/// (ignored when the spec has one class); Condition.domain selects a domain or -1 for both.
class OracleNoisePredictor : public NoisePredictor {
 public:
  OracleNoisePredictor(GaussianSpec spec, const NoiseSchedule& sched, bool class_conditioned = true);

  Vec predict_noise(std::span<const double> x_t, int t, const Condition& c) const override;
  int dim() const override { return spec_.dim; }

 private:
  GaussianSpec spec_;
  const NoiseSchedule& sched_;
  bool class_conditioned_;
};

/// Exact p(domain | x_t) classifier over the noisy domain marginals.
class BayesDomainClassifier : public NoisyClassifier {
 public:
  BayesDomainClassifier(GaussianSpec spec, const NoiseSchedule& sched);

  int num_labels() const override { return 2; }
  Vec log_probs(std::span<const double> x_t, int t) const override;
  Vec grad_log_prob(std::span<const double> x_t, int t, int label) const override;

 private:
  GaussianSpec spec_;
  const NoiseSchedule& sched_;
};

}  // namespace dacdm
