#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dacdm/checkpoint.hpp"
#include "dacdm/data.hpp"
#include "dacdm/diffusion.hpp"
#include "dacdm/tensor.hpp"

namespace dacdm {

enum class Regularizer {
  DomainAdversarial,  // gradient-reversal domain head on features
  ClassConfusion,     // batch class-correlation penalty on target predictions
  None,
};

Regularizer parse_regularizer(const std::string& name);
std::string regularizer_name(Regularizer r);

struct UdaConfig {
  Regularizer regularizer = Regularizer::DomainAdversarial;
  double tradeoff = 1.0;  // beta
  double step_size = 0.05;
  int batch_size = 32;  // per domain; labeled and target batches are the same size
  int iterations = 3000;
  std::vector<std::size_t> feature_hidden{32};
  std::size_t feature_dim = 16;
  std::vector<std::size_t> domain_hidden{32};
  double confusion_temperature = 2.5;
  /// step_size / (1 + 10 p)^0.75 with p the training progress.
  bool anneal = true;
  /// Adversarial weight ramps as 2 / (1 + exp(-10 p)) - 1.
  bool ramp = true;
  std::uint64_t seed = 1;
};

/// Feature extractor plus label and domain heads.
class TaskModel {
 public:
  struct Gradient {
    GradBundle extractor;
    GradBundle label_head;
    GradBundle domain_head;

    void set_zero();
    std::vector<std::span<const double>> coordinates() const;
  };

  TaskModel() = default;
  TaskModel(Mlp extractor, Mlp label_head, Mlp domain_head);
  static TaskModel create(int dim, int num_classes, const UdaConfig& cfg, Rng& rng);

  int dim() const { return static_cast<int>(extractor_.input_dim()); }
  int num_classes() const { return static_cast<int>(label_head_.output_dim()); }

  Vec features(std::span<const double> x) const { return extractor_.predict(x); }
  Vec logits(std::span<const double> x) const;
  /// Argmax class; ties go to the lowest index.
  int predict(std::span<const double> x) const;

  const Mlp& extractor() const { return extractor_; }
  const Mlp& label_head() const { return label_head_; }
  const Mlp& domain_head() const { return domain_head_; }

  Gradient zero_grad() const;
  void apply_gradient(const Gradient& grad, double step);
  /// Parameter views in the order of Gradient::coordinates().
  std::vector<std::span<double>> coordinates();

  Checkpoint to_checkpoint() const;
  static TaskModel from_checkpoint(const Checkpoint& ck);

 private:
  Mlp extractor_;
  Mlp label_head_;
  Mlp domain_head_;
};

struct UdaObjective {
  double task_loss = 0.0;
  double reg_loss = 0.0;
};

/// One mini-batch of the objective  CE(labeled) + beta * R(labeled, target).
/// Adds into grad the direction each parameter group descends:
///  - label head and extractor: d/dtheta of CE (+ beta * R for class confusion);
///  - domain adversarial: the domain head descends beta * L_dom while the
///    extractor receives the reversed gradient -adv_weight * beta * dL_dom/dh.
UdaObjective uda_batch_objective(const TaskModel& model, std::span<const LabeledPoint> labeled,
                                 std::span<const LabeledPoint> target, const UdaConfig& cfg, double adv_weight,
                                 TaskModel::Gradient& grad);

/// Class-confusion penalty on target logits z (rows): P = softmax(z / temperature),
/// L = 1 - (1/K) sum_j (sum_i P_ij^2) / (sum_i P_ij). Writes dL/dz into logit_grad.
double class_confusion_loss(const std::vector<Vec>& logits, double temperature, std::vector<Vec>* logit_grad);

struct UdaTrainResult {
  TaskModel model;
  std::vector<double> task_trace;
  std::vector<double> reg_trace;
};

/// The same code path trains f* on (D_s, D_t) and f_hat on (D_s_hat, D_t).
/// The target's y is never read.
UdaTrainResult train_uda(const DomainDataset& labeled, const DomainDataset& unlabeled_target, const UdaConfig& cfg);

/// Copy of target with y replaced by the model's hard prediction.
DomainDataset pseudo_label(const TaskModel& model, const DomainDataset& target);
Labeler make_labeler(const TaskModel& model);

struct AugmentedSource {
  DomainDataset data;
  double eta = 1.0;  // N_s / (N_s + N_g)
};

AugmentedSource augment_source(const DomainDataset& source, const DomainDataset& generated);

struct EvalResult {
  double accuracy = 0.0;
  Vec per_class;  // NaN for classes absent from the data
  Matrix confusion;  // rows = true class, cols = predicted
  std::size_t count = 0;
};

EvalResult evaluate(const TaskModel& model, const DomainDataset& data);
/// Predictions versus y for any labeler; used with the ground-truth generator too.
EvalResult evaluate_predictions(const DomainDataset& data, const std::vector<int>& predicted);
/// CSV `class,accuracy` with a final `all,<accuracy>` row.
void write_eval_csv(const EvalResult& r, std::ostream& out);

}  // namespace dacdm
