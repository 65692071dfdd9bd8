#include "dacdm/schedule.hpp"

#include <cmath>
#include <string>

#include "dacdm/error.hpp"

namespace dacdm {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
  if (steps < 1) throw ConfigError("diffusion.T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ConfigError("beta range must satisfy 0 < beta_start <= beta_end < 1");

  const auto n = static_cast<std::size_t>(steps) + 1;
  alpha_.assign(n, 1.0);
  alpha_bar_.assign(n, 1.0);
  sigma_.assign(n, 0.0);
  omega_.assign(n, 0.0);
  lambda_.assign(n, 0.0);

  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    alpha_[t] = 1.0 - beta;
    alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
  }
  auto posterior_var = [&](int t) {
    return (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]) * (1.0 - alpha_[t]);
  };
  for (int t = 1; t <= steps; ++t) {
    sigma_[t] = std::sqrt(posterior_var(t));
    double var = posterior_var(t);
    if (t == 1) var = steps >= 2 ? posterior_var(2) : 1.0 - alpha_[1];
    const double b = 1.0 - alpha_[t];
    omega_[t] = b * b / (2.0 * var * alpha_[t] * (1.0 - alpha_bar_[t]));
    lambda_[t] = 0.5 * std::log(alpha_bar_[t] / (1.0 - alpha_bar_[t]));
  }
}

int NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps_) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
  return t;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps_) throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps_) + "]");
  return alpha_bar_[t];
}

double NoiseSchedule::sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }
double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

Vec forward_noise(const NoiseSchedule& sched, std::span<const double> x0, int t, std::span<const double> eps) {
  if (t < 1 || t > sched.steps()) throw ConfigError("forward_noise: timestep out of range");
  if (x0.size() != eps.size()) throw ShapeError("forward_noise: eps width differs from x0");
  const double a = sched.sqrt_alpha_bar(t);
  const double s = sched.sqrt_one_minus_alpha_bar(t);
  Vec out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

Vec forward_step(const NoiseSchedule& sched, std::span<const double> x_prev, int t, Rng& rng) {
  const double a = std::sqrt(sched.alpha(t));
  const double s = std::sqrt(1.0 - sched.alpha(t));
  Vec out(x_prev.size());
  for (std::size_t i = 0; i < x_prev.size(); ++i) out[i] = a * x_prev[i] + s * rng.normal();
  return out;
}

}  // namespace dacdm
