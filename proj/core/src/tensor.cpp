#include "dacdm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "dacdm/error.hpp"

namespace dacdm {

namespace {

std::atomic<std::uint64_t> g_version_counter{1};

std::uint64_t next_version() { return g_version_counter.fetch_add(1, std::memory_order_relaxed); }

std::string dims(std::size_t a, std::size_t b) {
  return std::to_string(a) + " vs " + std::to_string(b);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw ShapeError("matrix data size mismatch: " + dims(data_.size(), rows * cols));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void affine(const Matrix& w, std::span<const double> b, std::span<const double> x, Vec& out) {
  if (w.cols() != x.size()) throw ShapeError("affine input width " + dims(x.size(), w.cols()));
  if (b.size() != w.rows()) throw ShapeError("affine bias width " + dims(b.size(), w.rows()));
  out.resize(w.rows());
  const double* wp = w.data().data();
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = b[r];
    const double* wr = wp + r * w.cols();
    for (std::size_t c = 0; c < w.cols(); ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot " + dims(a.size(), b.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double scale, std::span<const double> b, std::span<double> a) {
  if (a.size() != b.size()) throw ShapeError("axpy " + dims(a.size(), b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vec log_softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double lse = m + std::log(z);
  Vec out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

Vec softmax(std::span<const double> logits) {
  Vec out = log_softmax(logits);
  for (auto& v : out) v = std::exp(v);
  return out;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// ---------------------------------------------------------------- GradBundle

void GradBundle::set_zero() {
  for (auto& l : layers) {
    std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

void GradBundle::add(const GradBundle& other, double s) {
  if (other.layers.size() != layers.size()) throw ShapeError("grad bundle layer count " + dims(other.layers.size(), layers.size()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    axpy(s, other.layers[l].weight.data(), layers[l].weight.data());
    axpy(s, other.layers[l].bias, layers[l].bias);
  }
}

void GradBundle::scale(double factor) {
  for (auto& l : layers) {
    for (auto& w : l.weight.data()) w *= factor;
    for (auto& b : l.bias) b *= factor;
  }
}

bool GradBundle::all_finite() const {
  return std::all_of(layers.begin(), layers.end(), [](const DenseLayer& l) {
    return dacdm::all_finite(l.weight.data()) && dacdm::all_finite(l.bias);
  });
}

std::vector<std::span<double>> GradBundle::coordinates() {
  std::vector<std::span<double>> out;
  for (auto& l : layers) {
    out.emplace_back(l.weight.data());
    out.emplace_back(l.bias);
  }
  return out;
}

std::vector<std::span<const double>> GradBundle::coordinates() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weight.data());
    out.emplace_back(l.bias);
  }
  return out;
}

// ----------------------------------------------------------------------- Mlp

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)), version_(next_version()) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.out())
      throw ShapeError("layer " + std::to_string(l) + " bias width " + dims(layer.bias.size(), layer.out()));
    if (l > 0 && layer.in() != layers_[l - 1].out())
      throw ShapeError("layer " + std::to_string(l) + " does not chain: " + dims(layer.in(), layers_[l - 1].out()));
  }
}

Mlp Mlp::random(std::span<const std::size_t> widths, Rng& rng, double gain) {
  if (widths.size() < 2) throw ShapeError("an mlp needs at least input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer{Matrix(widths[l + 1], widths[l]), Vec(widths[l + 1], 0.0)};
    const double scale = gain / std::sqrt(static_cast<double>(std::max<std::size_t>(widths[l], 1)));
    for (auto& w : layer.weight.data()) w = scale * rng.normal();
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

Mlp Mlp::zeros(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw ShapeError("an mlp needs at least input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    layers.push_back(DenseLayer{Matrix(widths[l + 1], widths[l]), Vec(widths[l + 1], 0.0)});
  return Mlp(std::move(layers));
}

std::size_t Mlp::input_dim() const noexcept { return layers_.empty() ? 0 : layers_.front().in(); }
std::size_t Mlp::output_dim() const noexcept { return layers_.empty() ? 0 : layers_.back().out(); }
std::size_t Mlp::first_width() const noexcept { return layers_.empty() ? 0 : layers_.front().out(); }

std::size_t Mlp::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.data().size() + l.bias.size();
  return n;
}

Vec Mlp::forward(std::span<const double> input, MlpCache& cache, std::span<const double> first_offset) const {
  if (!layers_.empty() && input.size() != input_dim())
    throw ShapeError("mlp input width " + dims(input.size(), input_dim()));
  if (!first_offset.empty() && first_offset.size() != first_width())
    throw ShapeError("mlp first-layer offset width " + dims(first_offset.size(), first_width()));
  cache.version = version_;
  cache.has_offset = !first_offset.empty();
  cache.layer_inputs.resize(layers_.size() + 1);
  cache.layer_inputs[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vec& z = cache.layer_inputs[l + 1];
    affine(layers_[l].weight, layers_[l].bias, cache.layer_inputs[l], z);
    if (l == 0 && cache.has_offset) axpy(1.0, first_offset, z);
    if (l + 1 < layers_.size())
      for (auto& v : z) v = std::tanh(v);
  }
  return cache.layer_inputs.back();
}

Vec Mlp::predict(std::span<const double> input, std::span<const double> first_offset) const {
  MlpCache cache;
  return forward(input, cache, first_offset);
}

MlpBackward Mlp::backward(const MlpCache& cache, std::span<const double> output_grad, GradBundle* accumulate) const {
  if (cache.version != version_ || cache.layer_inputs.size() != layers_.size() + 1)
    throw StaleCacheError("backward called with a cache from a different parameter state");
  if (output_grad.size() != cache.output().size())
    throw ShapeError("output gradient width " + dims(output_grad.size(), cache.output().size()));
  if (accumulate != nullptr && accumulate->layers.size() != layers_.size())
    throw ShapeError("gradient accumulator has wrong layer count");

  MlpBackward result;
  Vec delta(output_grad.begin(), output_grad.end());
  Vec prev;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const DenseLayer& layer = layers_[li];
    // delta is d loss / d pre-activation of layer li after this block.
    if (li + 1 < layers_.size()) {
      const Vec& y = cache.layer_inputs[li + 1];
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= (1.0 - y[i] * y[i]);
    }
    const Vec& x = cache.layer_inputs[li];
    if (accumulate != nullptr) {
      DenseLayer& g = accumulate->layers[li];
      for (std::size_t r = 0; r < layer.out(); ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        double* gr = g.weight.data().data() + r * layer.in();
        for (std::size_t c = 0; c < layer.in(); ++c) gr[c] += d * x[c];
        g.bias[r] += d;
      }
    }
    if (li == 0 && cache.has_offset) result.offset_grad = delta;
    prev.assign(layer.in(), 0.0);
    const double* wp = layer.weight.data().data();
    for (std::size_t r = 0; r < layer.out(); ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* wr = wp + r * layer.in();
      for (std::size_t c = 0; c < layer.in(); ++c) prev[c] += wr[c] * d;
    }
    delta.swap(prev);
  }
  result.input_grad = std::move(delta);
  return result;
}

GradBundle Mlp::zero_grad() const {
  GradBundle g;
  for (const auto& l : layers_) g.layers.push_back(DenseLayer{Matrix(l.out(), l.in()), Vec(l.out(), 0.0)});
  return g;
}

void Mlp::apply_gradient(const GradBundle& grad, double step) {
  if (grad.layers.size() != layers_.size()) throw ShapeError("gradient layer count " + dims(grad.layers.size(), layers_.size()));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (grad.layers[l].weight.rows() != layers_[l].out() || grad.layers[l].weight.cols() != layers_[l].in())
      throw ShapeError("gradient layer " + std::to_string(l) + " shape mismatch");
    axpy(-step, grad.layers[l].weight.data(), layers_[l].weight.data());
    axpy(-step, grad.layers[l].bias, layers_[l].bias);
  }
  touch();
}

std::vector<std::span<double>> Mlp::coordinates() {
  touch();
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weight.data());
    out.emplace_back(l.bias);
  }
  return out;
}

std::vector<std::span<const double>> Mlp::coordinates() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers_) {
    out.emplace_back(l.weight.data());
    out.emplace_back(l.bias);
  }
  return out;
}

bool Mlp::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const DenseLayer& l) {
    return dacdm::all_finite(l.weight.data()) && dacdm::all_finite(l.bias);
  });
}

void Mlp::touch() { version_ = next_version(); }

MlpGradients mlp_backward(const Mlp& params, const MlpCache& cache, std::span<const double> output_grad) {
  MlpGradients out{params.zero_grad(), {}};
  out.input_grad = params.backward(cache, output_grad, &out.params).input_grad;
  return out;
}

// --------------------------------------------------------- finite differences

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-3);
}

double finite_diff_max_rel_error(const std::vector<std::span<double>>& coordinates,
                                 const std::vector<std::span<const double>>& analytic,
                                 const std::function<double()>& loss, double step) {
  if (coordinates.size() != analytic.size()) throw ShapeError("coordinate/gradient block count mismatch");
  double worst = 0.0;
  for (std::size_t b = 0; b < coordinates.size(); ++b) {
    if (coordinates[b].size() != analytic[b].size()) throw ShapeError("coordinate/gradient block width mismatch");
    for (std::size_t i = 0; i < coordinates[b].size(); ++i) {
      double& theta = coordinates[b][i];
      const double saved = theta;
      theta = saved + step;
      const double up = loss();
      theta = saved - step;
      const double down = loss();
      theta = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("non-finite loss during finite differences");
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic[b][i], numeric));
    }
  }
  return worst;
}

double finite_diff_check(const Mlp& params, std::span<const double> input, const MlpLossFn& loss_fn, double step) {
  const LossEval base = loss_fn(params, input);
  if (!std::isfinite(base.loss)) throw NumericError("non-finite loss in finite_diff_check");
  Mlp probe = params;
  Vec x(input.begin(), input.end());
  auto eval = [&] { return loss_fn(probe, x).loss; };

  std::vector<std::span<double>> coords = probe.coordinates();
  std::vector<std::span<const double>> analytic = base.param_grad.coordinates();
  if (!base.input_grad.empty()) {
    coords.emplace_back(x);
    analytic.emplace_back(base.input_grad);
  }
  return finite_diff_max_rel_error(coords, analytic, eval, step);
}

}  // namespace dacdm
