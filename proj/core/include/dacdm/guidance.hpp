#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dacdm/checkpoint.hpp"
#include "dacdm/data.hpp"
#include "dacdm/diffusion.hpp"
#include "dacdm/schedule.hpp"

namespace dacdm {

/// p(label | x_t, t) over a finite label set, differentiable in x_t.
class NoisyClassifier {
 public:
  virtual ~NoisyClassifier() = default;
  virtual int num_labels() const = 0;
  virtual Vec log_probs(std::span<const double> x_t, int t) const = 0;
  /// d/dx_t log p(label | x_t, t)
  virtual Vec grad_log_prob(std::span<const double> x_t, int t, int label) const = 0;
};

/// MLP classifier over [x_t, time embedding] producing one logit per label.
/// With two labels (0 = source, 1 = target) it is the domain classifier phi.
class MlpNoisyClassifier : public NoisyClassifier {
 public:
  MlpNoisyClassifier() = default;
  MlpNoisyClassifier(Mlp trunk, TimeEmbedding time_embed, int total_steps);

  int num_labels() const override { return static_cast<int>(trunk_.output_dim()); }
  Vec log_probs(std::span<const double> x_t, int t) const override;
  Vec grad_log_prob(std::span<const double> x_t, int t, int label) const override;
  int predict(std::span<const double> x_t, int t) const;

  /// Cross-entropy of `label`; adds its parameter gradient (times `weight`) into grad.
  double accumulate_cross_entropy(std::span<const double> x_t, int t, int label, double weight,
                                  GradBundle& grad) const;

  const Mlp& trunk() const { return trunk_; }
  Mlp& mutable_trunk() { return trunk_; }
  const TimeEmbedding& time_embed() const { return time_embed_; }
  int total_steps() const { return total_steps_; }

  Checkpoint to_checkpoint() const;
  static MlpNoisyClassifier from_checkpoint(const Checkpoint& ck);

 private:
  Vec trunk_input(std::span<const double> x_t, int t) const;

  Mlp trunk_;
  TimeEmbedding time_embed_;
  int total_steps_ = 1;
};

using DomainClassifier = MlpNoisyClassifier;

constexpr int kSourceLabel = 0;
constexpr int kTargetLabel = 1;

struct ClassifierTrainConfig {
  double step_size = 0.1;
  int batch_size = 64;
  int iterations = 6000;
  std::vector<std::size_t> hidden{32, 32};
  TimeEmbedding time_embed;
  std::uint64_t seed = 1;
  /// Timesteps at which the held-out accuracy diagnostic is reported.
  std::vector<int> diagnostic_steps;
};

struct ClassifierTrainResult {
  MlpNoisyClassifier classifier;
  std::vector<double> loss_trace;
  /// (t, held-out accuracy on freshly noised training points)
  std::vector<std::pair<int, double>> accuracy_by_t;
};

/// Stochastic version of  sum_t sum_{x0} CE(phi(x_t, t), label): each step
/// draws a batch uniformly from the labelled pool and an independent
/// t ~ U(1, T) per element.
ClassifierTrainResult train_noisy_classifier(std::span<const LabeledPoint> pool, int num_labels,
                                             const NoiseSchedule& sched, const ClassifierTrainConfig& cfg);

/// Domain classifier on D_s (label 0) and D_t (label 1).
ClassifierTrainResult train_domain_classifier(const DomainDataset& source, const DomainDataset& target,
                                              const NoiseSchedule& sched, const ClassifierTrainConfig& cfg);

Vec grad_log_domain_prob(const NoisyClassifier& clf, std::span<const double> x_t, int t, int domain_label);

/// Coefficient applied to the classifier gradient.
enum class GuidanceRule {
  SqrtOneMinusAlphaBar,  // s * sqrt(1 - alpha_bar_t)
  SigmaT,                // s * sigma_t
};

struct GuidanceTerm {
  const NoisyClassifier* classifier = nullptr;
  /// Fixed label to guide toward; -1 means "the class being generated".
  int label = kTargetLabel;
  double scale = 1.0;
};

struct GuidanceConfig {
  double scale = 1.0;
  int target_label = kTargetLabel;
  GuidanceRule rule = GuidanceRule::SqrtOneMinusAlphaBar;
};

double guidance_coefficient(GuidanceRule rule, const NoiseSchedule& sched, int t);

/// eps_tilde = eps_theta(x_t, t, c) - s * coef(t) * grad log p_phi(target | x_t, t)
Vec guided_noise(const NoisePredictor& model, const NoisyClassifier* clf, const GuidanceConfig& gcfg,
                 const NoiseSchedule& sched, std::span<const double> x_t, int t, const Condition& c);

/// Noise predictor with any number of classifier-guidance terms folded in.
/// Terms with zero scale are skipped, so a zero-scale wrapper is bit-identical
/// to the base model.
class GuidedPredictor : public NoisePredictor {
 public:
  GuidedPredictor(const NoisePredictor& base, const NoiseSchedule& sched, std::vector<GuidanceTerm> terms,
                  GuidanceRule rule = GuidanceRule::SqrtOneMinusAlphaBar);

  Vec predict_noise(std::span<const double> x_t, int t, const Condition& c) const override;
  int dim() const override { return base_.dim(); }

 private:
  const NoisePredictor& base_;
  const NoiseSchedule& sched_;
  std::vector<GuidanceTerm> terms_;
  GuidanceRule rule_;
};

}  // namespace dacdm
