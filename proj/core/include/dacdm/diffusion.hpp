#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dacdm/checkpoint.hpp"
#include "dacdm/data.hpp"
#include "dacdm/schedule.hpp"
#include "dacdm/tensor.hpp"

namespace dacdm {

/// Conditioning signal for the noise predictor. `domain` is -1 when the model
/// is not domain-conditioned.
struct Condition {
  int cls = 0;
  int domain = -1;

  bool operator==(const Condition&) const = default;
};

/// Anything that maps (x_t, t, c) to a noise estimate of the same width as x_t.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Vec predict_noise(std::span<const double> x_t, int t, const Condition& c) const = 0;
  virtual int dim() const = 0;
};

/// Sinusoidal embedding of the normalised time u = t / T:
/// [sin(u f_0), cos(u f_0), ..., sin(u f_{n-1}), cos(u f_{n-1})],
/// with frequencies geometric in [1, max_freq].
struct TimeEmbedding {
  int width = 16;
  double max_freq = 20.0;

  Vec embed(int t, int total_steps) const;
};

/// Which condition channels the denoiser consumes.
enum class Conditioning {
  Class,           // class embedding only (default)
  ClassAndDomain,  // class embedding + domain embedding, summed
  Domain,          // domain embedding only
};

struct DenoiserShape {
  int dim = 2;
  int num_classes = 2;
  Conditioning conditioning = Conditioning::Class;
  std::vector<std::size_t> hidden{64, 64};
  TimeEmbedding time_embed;
};

/// Noise predictor eps_theta(x_t, t, c): an MLP over [x_t, time embedding]
/// whose first hidden pre-activation receives the class (and/or domain)
/// embedding additively.
class ConditionedDenoiser : public NoisePredictor {
 public:
  struct Gradient {
    GradBundle trunk;
    Matrix class_embed;
    Matrix domain_embed;

    void set_zero();
    std::vector<std::span<const double>> coordinates() const;
  };

  ConditionedDenoiser() = default;
  ConditionedDenoiser(Mlp trunk, Matrix class_embed, Matrix domain_embed, Conditioning conditioning,
                      TimeEmbedding time_embed, int total_steps);

  /// Random trunk, embeddings N(0, embed_scale^2). The output layer is scaled by out_gain.
  static ConditionedDenoiser create(const DenoiserShape& shape, int total_steps, Rng& rng,
                                    double embed_scale = 0.5, double out_gain = 1.0);

  Vec predict_noise(std::span<const double> x_t, int t, const Condition& c) const override;
  int dim() const override { return static_cast<int>(trunk_.output_dim()); }

  int num_classes() const { return static_cast<int>(class_embed_.rows()); }
  int total_steps() const { return total_steps_; }
  Conditioning conditioning() const { return conditioning_; }
  const Mlp& trunk() const { return trunk_; }
  const Matrix& class_embed() const { return class_embed_; }
  const Matrix& domain_embed() const { return domain_embed_; }
  const TimeEmbedding& time_embed() const { return time_embed_; }

  Gradient zero_grad() const;
  /// Adds d/dtheta of weight * ||target - eps_theta(x_t, t, c)||^2 into grad; returns the term.
  double accumulate_squared_error(std::span<const double> x_t, int t, const Condition& c,
                                  std::span<const double> target_eps, double weight, Gradient& grad) const;
  void apply_gradient(const Gradient& grad, double step);

  /// Parameter views in the order of Gradient::coordinates().
  std::vector<std::span<double>> coordinates();

  Checkpoint to_checkpoint() const;
  static ConditionedDenoiser from_checkpoint(const Checkpoint& ck);

 private:
  Vec embedding_offset(const Condition& c) const;
  Vec trunk_input(std::span<const double> x_t, int t) const;

  Mlp trunk_;
  Matrix class_embed_;
  Matrix domain_embed_;
  Conditioning conditioning_ = Conditioning::Class;
  TimeEmbedding time_embed_;
  int total_steps_ = 1;
};

inline Vec predict_noise(const NoisePredictor& model, std::span<const double> x_t, int t, int cls) {
  return model.predict_noise(x_t, t, Condition{cls, -1});
}

struct DiffusionTrainConfig {
  double step_size = 0.05;  // gamma
  int batch_size = 64;      // B
  int iterations = 20000;
  std::uint64_t seed = 1;
  DenoiserShape shape;
  double embed_scale = 0.5;
};

/// One training example after condition assignment.
struct ConditionedExample {
  Vec x0;
  Condition condition;
};

struct DiffusionTrainHooks {
  /// Called once per pooled example with the condition it will train under.
  std::function<void(const LabeledPoint&, const Condition&)> on_condition;
  std::function<void(int iteration, int t, double loss)> on_iteration;
};

struct DiffusionTrainResult {
  ConditionedDenoiser model;
  std::vector<double> loss_trace;
};

/// Maps a target point to its pseudo-label.
using Labeler = std::function<int(std::span<const double>)>;

/// Mini-batch loss  omega_t / B * sum_i ||eps_i - eps_theta(x_{t,i}, t, c_i)||^2
/// with one t shared by the batch. Adds the gradient into `grad`.
double conditioned_batch_loss(const ConditionedDenoiser& model, const NoiseSchedule& sched,
                              std::span<const ConditionedExample> batch, int t,
                              std::span<const Vec> eps, ConditionedDenoiser::Gradient& grad);

/// SGD on the shared-t mini-batch loss over a fixed pool of conditioned examples.
DiffusionTrainResult train_denoiser(std::span<const ConditionedExample> pool, const NoiseSchedule& sched,
                                    const DiffusionTrainConfig& cfg, const DiffusionTrainHooks& hooks = {});

/// Label-conditioned training over D_s with true labels and D_t with labels
/// assigned once by the frozen pseudo-labeler.
DiffusionTrainResult train_label_conditioned(const DomainDataset& source, const DomainDataset& target,
                                             const Labeler& pseudo_labeler, const NoiseSchedule& sched,
                                             const DiffusionTrainConfig& cfg, const DiffusionTrainHooks& hooks = {});

/// Target-only training; the target set must already carry (pseudo-)labels in y.
DiffusionTrainResult train_target_only(const DomainDataset& target, const NoiseSchedule& sched,
                                       const DiffusionTrainConfig& cfg, const DiffusionTrainHooks& hooks = {});

/// Pool builder shared by the trainers. Domain channel is 0 for source/generated, 1 for target.
std::vector<ConditionedExample> build_pool(const DomainDataset& source, const DomainDataset& target,
                                           const Labeler* pseudo_labeler, Conditioning conditioning,
                                           const DiffusionTrainHooks& hooks);

}  // namespace dacdm
