#include "dacdm/diffusion.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "dacdm/error.hpp"
#include "dacdm/rng.hpp"

namespace dacdm {

Vec TimeEmbedding::embed(int t, int total_steps) const {
  if (width < 2 || width % 2 != 0) throw ConfigError("time embedding width must be a positive even number");
  const int half = width / 2;
  const double u = static_cast<double>(t) / static_cast<double>(total_steps);
  Vec out(static_cast<std::size_t>(width));
  for (int k = 0; k < half; ++k) {
    const double freq = half == 1 ? 1.0 : std::pow(max_freq, static_cast<double>(k) / (half - 1));
    out[2 * k] = std::sin(u * freq);
    out[2 * k + 1] = std::cos(u * freq);
  }
  return out;
}

// ------------------------------------------------------ ConditionedDenoiser

void ConditionedDenoiser::Gradient::set_zero() {
  trunk.set_zero();
  std::fill(class_embed.data().begin(), class_embed.data().end(), 0.0);
  std::fill(domain_embed.data().begin(), domain_embed.data().end(), 0.0);
}

std::vector<std::span<const double>> ConditionedDenoiser::Gradient::coordinates() const {
  auto out = trunk.coordinates();
  out.emplace_back(class_embed.data());
  out.emplace_back(domain_embed.data());
  return out;
}

ConditionedDenoiser::ConditionedDenoiser(Mlp trunk, Matrix class_embed, Matrix domain_embed,
                                         Conditioning conditioning, TimeEmbedding time_embed, int total_steps)
    : trunk_(std::move(trunk)),
      class_embed_(std::move(class_embed)),
      domain_embed_(std::move(domain_embed)),
      conditioning_(conditioning),
      time_embed_(time_embed),
      total_steps_(total_steps) {
  if (trunk_.num_layers() < 2) throw ShapeError("denoiser trunk needs at least one hidden layer");
  const auto h = trunk_.first_width();
  const auto d = trunk_.output_dim();
  if (trunk_.input_dim() != d + static_cast<std::size_t>(time_embed_.width))
    throw ShapeError("denoiser trunk input must be x width + time embedding width");
  const bool wants_class = conditioning_ != Conditioning::Domain;
  const bool wants_domain = conditioning_ != Conditioning::Class;
  if (wants_class && (class_embed_.rows() < 1 || class_embed_.cols() != h))
    throw ShapeError("class embedding must be K x first hidden width");
  if (!wants_class && class_embed_.rows() != 0) throw ShapeError("domain-only denoiser carries no class embedding");
  if (wants_domain && (domain_embed_.rows() != 2 || domain_embed_.cols() != h))
    throw ShapeError("domain embedding must be 2 x first hidden width");
  if (!wants_domain && domain_embed_.rows() != 0) throw ShapeError("class-only denoiser carries no domain embedding");
  if (total_steps_ < 1) throw ConfigError("denoiser total steps must be >= 1");
}

ConditionedDenoiser ConditionedDenoiser::create(const DenoiserShape& shape, int total_steps, Rng& rng,
                                                double embed_scale, double out_gain) {
  if (shape.dim < 1 || shape.num_classes < 1) throw ConfigError("denoiser dim and K must be >= 1");
  if (shape.hidden.empty()) throw ConfigError("denoiser needs at least one hidden layer");
  std::vector<std::size_t> widths;
  widths.push_back(static_cast<std::size_t>(shape.dim + shape.time_embed.width));
  widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
  widths.push_back(static_cast<std::size_t>(shape.dim));
  Mlp trunk = Mlp::random(widths, rng);
  if (out_gain != 1.0) {
    std::vector<DenseLayer> layers = trunk.layers();
    for (auto& w : layers.back().weight.data()) w *= out_gain;
    trunk = Mlp(std::move(layers));
  }
  const std::size_t h = shape.hidden.front();
  const bool wants_class = shape.conditioning != Conditioning::Domain;
  const bool wants_domain = shape.conditioning != Conditioning::Class;
  Matrix class_embed(wants_class ? static_cast<std::size_t>(shape.num_classes) : 0, h);
  Matrix domain_embed(wants_domain ? 2 : 0, h);
  for (auto& v : class_embed.data()) v = embed_scale * rng.normal();
  for (auto& v : domain_embed.data()) v = embed_scale * rng.normal();
  return ConditionedDenoiser(std::move(trunk), std::move(class_embed), std::move(domain_embed), shape.conditioning,
                             shape.time_embed, total_steps);
}

Vec ConditionedDenoiser::embedding_offset(const Condition& c) const {
  Vec offset(trunk_.first_width(), 0.0);
  if (conditioning_ != Conditioning::Domain) {
    if (c.cls < 0 || c.cls >= static_cast<int>(class_embed_.rows()))
      throw ConfigError("class condition " + std::to_string(c.cls) + " outside [0, " +
                        std::to_string(class_embed_.rows()) + ")");
    axpy(1.0, class_embed_.row(static_cast<std::size_t>(c.cls)), offset);
  }
  if (conditioning_ != Conditioning::Class) {
    if (c.domain < 0 || c.domain > 1) throw ConfigError("domain condition must be 0 (source) or 1 (target)");
    axpy(1.0, domain_embed_.row(static_cast<std::size_t>(c.domain)), offset);
  }
  return offset;
}

Vec ConditionedDenoiser::trunk_input(std::span<const double> x_t, int t) const {
  if (static_cast<int>(x_t.size()) != dim()) throw ShapeError("denoiser input width differs from model dim");
  if (t < 1 || t > total_steps_) throw ConfigError("denoiser timestep out of range");
  Vec in(x_t.begin(), x_t.end());
  const Vec te = time_embed_.embed(t, total_steps_);
  in.insert(in.end(), te.begin(), te.end());
  return in;
}

Vec ConditionedDenoiser::predict_noise(std::span<const double> x_t, int t, const Condition& c) const {
  const Vec offset = embedding_offset(c);
  return trunk_.predict(trunk_input(x_t, t), offset);
}

ConditionedDenoiser::Gradient ConditionedDenoiser::zero_grad() const {
  return Gradient{trunk_.zero_grad(), Matrix(class_embed_.rows(), class_embed_.cols()),
                  Matrix(domain_embed_.rows(), domain_embed_.cols())};
}

double ConditionedDenoiser::accumulate_squared_error(std::span<const double> x_t, int t, const Condition& c,
                                                     std::span<const double> target_eps, double weight,
                                                     Gradient& grad) const {
  const Vec offset = embedding_offset(c);
  MlpCache cache;
  const Vec out = trunk_.forward(trunk_input(x_t, t), cache, offset);
  if (target_eps.size() != out.size()) throw ShapeError("target noise width differs from model output");
  Vec g(out.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double diff = out[i] - target_eps[i];
    sq += diff * diff;
    g[i] = 2.0 * weight * diff;
  }
  const MlpBackward back = trunk_.backward(cache, g, &grad.trunk);
  if (conditioning_ != Conditioning::Domain) axpy(1.0, back.offset_grad, grad.class_embed.row(static_cast<std::size_t>(c.cls)));
  if (conditioning_ != Conditioning::Class) axpy(1.0, back.offset_grad, grad.domain_embed.row(static_cast<std::size_t>(c.domain)));
  return weight * sq;
}

void ConditionedDenoiser::apply_gradient(const Gradient& grad, double step) {
  trunk_.apply_gradient(grad.trunk, step);
  axpy(-step, grad.class_embed.data(), class_embed_.data());
  axpy(-step, grad.domain_embed.data(), domain_embed_.data());
}

std::vector<std::span<double>> ConditionedDenoiser::coordinates() {
  auto out = trunk_.coordinates();
  out.emplace_back(class_embed_.data());
  out.emplace_back(domain_embed_.data());
  return out;
}

namespace {

std::string conditioning_name(Conditioning c) {
  switch (c) {
    case Conditioning::Class: return "class";
    case Conditioning::ClassAndDomain: return "class+domain";
    case Conditioning::Domain: return "domain";
  }
  return "class";
}

Conditioning conditioning_from(const std::string& s) {
  if (s == "class") return Conditioning::Class;
  if (s == "class+domain") return Conditioning::ClassAndDomain;
  if (s == "domain") return Conditioning::Domain;
  throw ParseError("unknown conditioning '" + s + "'", 0);
}

}  // namespace

Checkpoint ConditionedDenoiser::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = "denoiser";
  ck.meta.set("total_steps", total_steps_);
  ck.meta.set("conditioning", conditioning_name(conditioning_));
  ck.meta.set("time_embed.width", time_embed_.width);
  ck.meta.set("time_embed.max_freq", time_embed_.max_freq);
  ck.networks.emplace_back("trunk", trunk_);
  ck.matrices.emplace_back("class_embed", class_embed_);
  ck.matrices.emplace_back("domain_embed", domain_embed_);
  return ck;
}

ConditionedDenoiser ConditionedDenoiser::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "denoiser") throw ParseError("checkpoint kind '" + ck.kind + "' is not a denoiser", 0);
  TimeEmbedding te{ck.meta.get_int("time_embed.width"), ck.meta.get_double("time_embed.max_freq")};
  return ConditionedDenoiser(ck.network("trunk"), ck.matrix("class_embed"), ck.matrix("domain_embed"),
                             conditioning_from(ck.meta.get("conditioning")), te, ck.meta.get_int("total_steps"));
}

// ------------------------------------------------------------------ training

double conditioned_batch_loss(const ConditionedDenoiser& model, const NoiseSchedule& sched,
                              std::span<const ConditionedExample> batch, int t, std::span<const Vec> eps,
                              ConditionedDenoiser::Gradient& grad) {
  if (batch.size() != eps.size()) throw ShapeError("one noise draw per batch element required");
  if (batch.empty()) return 0.0;
  const double weight = sched.omega(t) / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vec x_t = forward_noise(sched, batch[i].x0, t, eps[i]);
    loss += model.accumulate_squared_error(x_t, t, batch[i].condition, eps[i], weight, grad);
  }
  return loss;
}

DiffusionTrainResult train_denoiser(std::span<const ConditionedExample> pool, const NoiseSchedule& sched,
                                    const DiffusionTrainConfig& cfg, const DiffusionTrainHooks& hooks) {
  if (!(cfg.step_size >= 0.0)) throw ConfigError("diffusion step size must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("diffusion batch size must be >= 1");
  if (cfg.iterations < 0) throw ConfigError("diffusion iteration budget must be >= 0");
  if (pool.empty()) throw ConfigError("diffusion training pool is empty");

  Rng init_rng(derive_seed(cfg.seed, "diffusion/init"));
  Rng rng(derive_seed(cfg.seed, "diffusion/train"));
  DiffusionTrainResult result{ConditionedDenoiser::create(cfg.shape, sched.steps(), init_rng, cfg.embed_scale), {}};
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));

  auto grad = result.model.zero_grad();
  std::vector<ConditionedExample> batch(static_cast<std::size_t>(cfg.batch_size));
  std::vector<Vec> eps(static_cast<std::size_t>(cfg.batch_size));
  const int n = static_cast<int>(pool.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    for (auto& b : batch) b = pool[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    const int t = rng.uniform_int(1, sched.steps());
    for (auto& e : eps) e = rng.normal_vec(static_cast<std::size_t>(cfg.shape.dim));
    grad.set_zero();
    const double loss = conditioned_batch_loss(result.model, sched, batch, t, eps, grad);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "non-finite diffusion loss at iteration " << it << " (t=" << t << ", loss=" << loss << ")";
      throw NumericError(msg.str());
    }
    result.model.apply_gradient(grad, cfg.step_size);
    result.loss_trace.push_back(loss);
    if (hooks.on_iteration) hooks.on_iteration(it, t, loss);
  }
  return result;
}

std::vector<ConditionedExample> build_pool(const DomainDataset& source, const DomainDataset& target,
                                           const Labeler* pseudo_labeler, Conditioning conditioning,
                                           const DiffusionTrainHooks& hooks) {
  if (!source.empty() && !target.empty() && (source.dim != target.dim || source.num_classes != target.num_classes))
    throw ShapeError("source and target must share dim and K");
  std::vector<ConditionedExample> pool;
  pool.reserve(source.size() + target.size());
  auto add = [&](const LabeledPoint& p, int cls, int dom) {
    Condition c{conditioning == Conditioning::Domain ? 0 : cls, conditioning == Conditioning::Class ? -1 : dom};
    if (hooks.on_condition) hooks.on_condition(p, c);
    pool.push_back({p.x, c});
  };
  for (const auto& p : source.points) add(p, p.y, p.domain == Domain::Target ? 1 : 0);
  for (const auto& p : target.points) add(p, pseudo_labeler != nullptr ? (*pseudo_labeler)(p.x) : p.y, 1);
  return pool;
}

DiffusionTrainResult train_label_conditioned(const DomainDataset& source, const DomainDataset& target,
                                             const Labeler& pseudo_labeler, const NoiseSchedule& sched,
                                             const DiffusionTrainConfig& cfg, const DiffusionTrainHooks& hooks) {
  if (!pseudo_labeler) throw ConfigError("label-conditioned training needs a pseudo-labeler");
  const auto pool = build_pool(source, target, &pseudo_labeler, cfg.shape.conditioning, hooks);
  return train_denoiser(pool, sched, cfg, hooks);
}

DiffusionTrainResult train_target_only(const DomainDataset& target, const NoiseSchedule& sched,
                                       const DiffusionTrainConfig& cfg, const DiffusionTrainHooks& hooks) {
  const DomainDataset none{{}, target.num_classes, target.dim};
  const auto pool = build_pool(none, target, nullptr, cfg.shape.conditioning, hooks);
  return train_denoiser(pool, sched, cfg, hooks);
}

}  // namespace dacdm
