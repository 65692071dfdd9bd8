#pragma once

#include <span>
#include <vector>

#include "dacdm/tensor.hpp"

namespace dacdm {

/// Per-timestep diffusion constants for a linear beta schedule.
///
/// All arrays are indexed by the timestep t itself; index 0 of the per-step
/// arrays is unused except alpha_bar[0] == 1 ("clean data").
///   alpha[t]     = 1 - beta_t
///   alpha_bar[t] = prod_{s<=t} alpha[s]
///   sigma[t]^2   = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * (1 - alpha[t])   (sigma[1] == 0)
///   omega[t]     = (1 - alpha[t])^2 / (2 sigma[t]^2 alpha[t] (1 - alpha_bar[t]))
///   lambda[t]    = 0.5 * log(alpha_bar[t] / (1 - alpha_bar[t]))
///
/// omega[1] would divide by sigma[1]^2 == 0; it is evaluated with the clipped
/// posterior variance sigma[2]^2 (beta_1 when T == 1).
class NoiseSchedule {
 public:
  NoiseSchedule(int steps, double beta_start, double beta_end);

  int steps() const noexcept { return steps_; }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  double alpha(int t) const { return alpha_.at(check(t)); }
  double alpha_bar(int t) const;  // valid for t in [0, T]
  double sigma(int t) const { return sigma_.at(check(t)); }
  double omega(int t) const { return omega_.at(check(t)); }
  double lambda(int t) const { return lambda_.at(check(t)); }

  double sqrt_alpha_bar(int t) const;
  double sqrt_one_minus_alpha_bar(int t) const;

 private:
  int check(int t) const;

  int steps_;
  double beta_start_;
  double beta_end_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> sigma_;
  std::vector<double> omega_;
  std::vector<double> lambda_;
};

inline NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule(steps, beta_start, beta_end);
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Vec forward_noise(const NoiseSchedule& sched, std::span<const double> x0, int t, std::span<const double> eps);

/// One draw from the stepwise kernel q(x_t | x_{t-1}) = N(sqrt(alpha_t) x_{t-1}, (1 - alpha_t) I).
Vec forward_step(const NoiseSchedule& sched, std::span<const double> x_prev, int t, Rng& rng);

}  // namespace dacdm
