#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dacdm/data.hpp"
#include "dacdm/diffusion.hpp"
#include "dacdm/guidance.hpp"
#include "dacdm/schedule.hpp"

namespace dacdm {

/// Timesteps t_0 = T > t_1 > ... > t_M >= 1 and log-SNR increments
/// b[i] = lambda(t_i) - lambda(t_{i-1}) (b[0] is unused and zero).
struct SolverPlan {
  int steps = 0;  // M
  std::vector<int> timesteps;
  Vec b;
};

/// Timesteps uniform in lambda between lambda(T) and lambda(1), rounded to the
/// nearest grid point and forced strictly decreasing. Requires 1 <= steps <= T - 1.
SolverPlan make_plan(const NoiseSchedule& sched, int steps);

enum class SolverFormula {
  /// Second-order multistep update in data-prediction form, checked against the exact ODE.
  Validated,
  /// The update exactly as printed: sqrt(alpha_{t_i}) in the multistep rule and the
  /// printed first step.
  Paper,
  /// First-order data-prediction step at every i; the order-comparison reference.
  FirstOrder,
};

SolverFormula parse_solver_formula(const std::string& name);
std::string solver_formula_name(SolverFormula f);

/// x_theta(x_t, t) = (x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)
Vec predict_x0(const NoiseSchedule& sched, std::span<const double> x_t, int t, std::span<const double> eps);

/// Deterministic solver from a given x_T. Throws NumericError naming the step on a non-finite state.
/// A positive x0_clip clamps every data prediction to [-x0_clip, x0_clip].
Vec dpm_solverpp_solve(const NoisePredictor& model, const NoiseSchedule& sched, const SolverPlan& plan,
                       std::span<const double> x_T, const Condition& c,
                       SolverFormula formula = SolverFormula::Validated, double x0_clip = 0.0);

/// Draws x_T ~ N(0, I) from `seed` and runs the solver on the guided predictor.
std::pair<Vec, int> dpm_solverpp_sample(const NoisePredictor& model, const NoisyClassifier* clf,
                                        const GuidanceConfig& gcfg, const NoiseSchedule& sched,
                                        const SolverPlan& plan, const Condition& c, std::uint64_t seed,
                                        SolverFormula formula = SolverFormula::Validated, double x0_clip = 0.0);

/// Reverse DDPM chain t = T..1 with fresh noise at every step but the last.
Vec ancestral_solve(const NoisePredictor& model, const NoiseSchedule& sched, std::span<const double> x_T,
                    const Condition& c, Rng& rng);
Vec ancestral_sample(const NoisePredictor& model, const NoisyClassifier* clf, const GuidanceConfig& gcfg,
                     const NoiseSchedule& sched, const Condition& c, std::uint64_t seed);

enum class ClassRule {
  /// Equal count per class; any remainder goes to the lowest class indices.
  PerClass,
  /// Each sample draws its class uniformly from its own stream.
  Uniform,
};

struct GenerateConfig {
  int total = 0;  // N_g
  ClassRule class_rule = ClassRule::PerClass;
  SolverFormula formula = SolverFormula::Validated;
  double x0_clip = 0.0;  // 0 disables clamping
  /// Domain channel passed to the denoiser (-1 when it is not domain-conditioned).
  int domain_channel = -1;
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Classes assigned to samples 0..n-1 by the per-class rule.
std::vector<int> per_class_labels(int n, int num_classes);

/// N_g points tagged Generated. `model` is used as given; wrap it in a
/// GuidedPredictor to apply guidance. Output does not depend on `threads`.
DomainDataset generate_dataset(const NoisePredictor& model, int num_classes, const NoiseSchedule& sched,
                               const SolverPlan& plan, const GenerateConfig& cfg);

}  // namespace dacdm
