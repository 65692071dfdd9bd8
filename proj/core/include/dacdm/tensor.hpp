#pragma once

// Dense numeric substrate: vectors, row-major matrices and a tanh multilayer
// perceptron with hand-written forward and backward passes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dacdm/rng.hpp"

namespace dacdm {

using Vec = std::vector<double>;

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// y = W x + b, into out (resized).
void affine(const Matrix& w, std::span<const double> b, std::span<const double> x, Vec& out);

double dot(std::span<const double> a, std::span<const double> b);
/// a += scale * b
void axpy(double scale, std::span<const double> b, std::span<double> a);
bool all_finite(std::span<const double> v);

/// Numerically stable log-softmax.
Vec log_softmax(std::span<const double> logits);
Vec softmax(std::span<const double> logits);
/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

struct DenseLayer {
  Matrix weight;  // out x in
  Vec bias;       // out

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

/// Gradient of a scalar loss with respect to every parameter of an Mlp.
/// Shape-congruent with the parameters it was produced from.
struct GradBundle {
  std::vector<DenseLayer> layers;

  void set_zero();
  /// this += scale * other
  void add(const GradBundle& other, double scale = 1.0);
  void scale(double factor);
  bool all_finite() const;
  std::vector<std::span<double>> coordinates();
  std::vector<std::span<const double>> coordinates() const;
};

class Mlp;

/// Activation record produced by Mlp::forward and consumed by Mlp::backward.
struct MlpCache {
  std::uint64_t version = 0;
  /// layer_inputs[l] is the input seen by layer l; the last entry is the network output.
  std::vector<Vec> layer_inputs;
  bool has_offset = false;

  const Vec& output() const { return layer_inputs.back(); }
};

struct MlpBackward {
  Vec input_grad;
  /// Gradient with respect to the additive offset on the first pre-activation.
  Vec offset_grad;
};

/// Multilayer perceptron: tanh on hidden layers, identity on the output layer.
///
/// The first hidden pre-activation may receive an additive offset; conditioned
/// networks use it to inject embeddings. A network with no layers is the identity.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// Widths (in, h1, ..., out). Weights drawn N(0, gain^2 / fan_in), biases zero.
  static Mlp random(std::span<const std::size_t> widths, Rng& rng, double gain = 1.0);
  static Mlp zeros(std::span<const std::size_t> widths);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t input_dim() const noexcept;
  std::size_t output_dim() const noexcept;
  std::size_t parameter_count() const noexcept;
  /// Width of the first pre-activation (the offset width accepted by forward).
  std::size_t first_width() const noexcept;

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::uint64_t version() const noexcept { return version_; }

  Vec forward(std::span<const double> input, MlpCache& cache,
              std::span<const double> first_offset = {}) const;
  /// Forward without recording; for inference.
  Vec predict(std::span<const double> input, std::span<const double> first_offset = {}) const;

  /// Backpropagates output_grad. When `accumulate` is non-null, parameter
  /// gradients are added into it (it must already be shaped by zero_grad()).
  MlpBackward backward(const MlpCache& cache, std::span<const double> output_grad,
                       GradBundle* accumulate) const;

  GradBundle zero_grad() const;
  /// theta <- theta - step * grad
  void apply_gradient(const GradBundle& grad, double step);

  /// Mutable views of every parameter (weights then bias, layer by layer), in
  /// the same order as GradBundle::coordinates(). Invalidates existing caches.
  std::vector<std::span<double>> coordinates();
  std::vector<std::span<const double>> coordinates() const;
  bool all_finite() const;

  bool operator==(const Mlp& other) const { return layers_ == other.layers_; }

 private:
  void touch();

  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 0;
};

/// Free-function spelling of the forward pass.
inline Vec mlp_forward(const Mlp& params, std::span<const double> input, MlpCache& cache) {
  return params.forward(input, cache);
}

struct MlpGradients {
  GradBundle params;
  Vec input_grad;
};

MlpGradients mlp_backward(const Mlp& params, const MlpCache& cache,
                          std::span<const double> output_grad);

/// Analytic loss evaluation consumed by finite_diff_check.
struct LossEval {
  double loss = 0.0;
  GradBundle param_grad;
  Vec input_grad;
};
using MlpLossFn = std::function<LossEval(const Mlp&, std::span<const double>)>;

/// Relative error |a - n| / max(|a| + |n|, 1e-3).
double relative_error(double analytic, double numeric);

/// Central-difference check of every parameter and input coordinate against
/// loss_fn's analytic gradients. Returns the maximum relative error.
double finite_diff_check(const Mlp& params, std::span<const double> input, const MlpLossFn& loss_fn,
                         double step = 1e-5);

/// Generic central-difference check: perturbs each coordinate in place,
/// evaluates `loss`, restores it. `analytic` must mirror `coordinates`.
double finite_diff_max_rel_error(const std::vector<std::span<double>>& coordinates,
                                 const std::vector<std::span<const double>>& analytic,
                                 const std::function<double()>& loss, double step = 1e-5);

}  // namespace dacdm
