#include "dacdm/guidance.hpp"

#include <cmath>
#include <sstream>

#include "dacdm/error.hpp"
#include "dacdm/rng.hpp"

namespace dacdm {

MlpNoisyClassifier::MlpNoisyClassifier(Mlp trunk, TimeEmbedding time_embed, int total_steps)
    : trunk_(std::move(trunk)), time_embed_(time_embed), total_steps_(total_steps) {
  if (trunk_.num_layers() < 1) throw ShapeError("classifier trunk needs at least one layer");
  if (trunk_.output_dim() < 2) throw ShapeError("classifier needs at least two labels");
  if (trunk_.input_dim() <= static_cast<std::size_t>(time_embed_.width))
    throw ShapeError("classifier input must be x width + time embedding width");
}

Vec MlpNoisyClassifier::trunk_input(std::span<const double> x_t, int t) const {
  if (x_t.size() + static_cast<std::size_t>(time_embed_.width) != trunk_.input_dim())
    throw ShapeError("classifier input width differs from model");
  if (t < 1 || t > total_steps_) throw ConfigError("classifier timestep out of range");
  Vec in(x_t.begin(), x_t.end());
  const Vec te = time_embed_.embed(t, total_steps_);
  in.insert(in.end(), te.begin(), te.end());
  return in;
}

Vec MlpNoisyClassifier::log_probs(std::span<const double> x_t, int t) const {
  return log_softmax(trunk_.predict(trunk_input(x_t, t)));
}

int MlpNoisyClassifier::predict(std::span<const double> x_t, int t) const {
  return static_cast<int>(argmax(log_probs(x_t, t)));
}

Vec MlpNoisyClassifier::grad_log_prob(std::span<const double> x_t, int t, int label) const {
  if (label < 0 || label >= num_labels()) throw ConfigError("classifier label out of range");
  MlpCache cache;
  const Vec logits = trunk_.forward(trunk_input(x_t, t), cache);
  Vec g = softmax(logits);
  for (auto& v : g) v = -v;
  g[static_cast<std::size_t>(label)] += 1.0;
  Vec in_grad = trunk_.backward(cache, g, nullptr).input_grad;
  in_grad.resize(x_t.size());
  return in_grad;
}

double MlpNoisyClassifier::accumulate_cross_entropy(std::span<const double> x_t, int t, int label, double weight,
                                                    GradBundle& grad) const {
  MlpCache cache;
  const Vec logits = trunk_.forward(trunk_input(x_t, t), cache);
  const Vec lp = log_softmax(logits);
  Vec g(lp.size());
  for (std::size_t k = 0; k < lp.size(); ++k) g[k] = weight * std::exp(lp[k]);
  g[static_cast<std::size_t>(label)] -= weight;
  trunk_.backward(cache, g, &grad);
  return -weight * lp[static_cast<std::size_t>(label)];
}

Checkpoint MlpNoisyClassifier::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = "noisy_classifier";
  ck.meta.set("total_steps", total_steps_);
  ck.meta.set("time_embed.width", time_embed_.width);
  ck.meta.set("time_embed.max_freq", time_embed_.max_freq);
  ck.networks.emplace_back("trunk", trunk_);
  return ck;
}

MlpNoisyClassifier MlpNoisyClassifier::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "noisy_classifier") throw ParseError("checkpoint kind '" + ck.kind + "' is not a noisy classifier", 0);
  TimeEmbedding te{ck.meta.get_int("time_embed.width"), ck.meta.get_double("time_embed.max_freq")};
  return MlpNoisyClassifier(ck.network("trunk"), te, ck.meta.get_int("total_steps"));
}

ClassifierTrainResult train_noisy_classifier(std::span<const LabeledPoint> pool, int num_labels,
                                             const NoiseSchedule& sched, const ClassifierTrainConfig& cfg) {
  if (pool.empty()) throw ConfigError("classifier training pool is empty");
  if (cfg.batch_size < 1 || cfg.iterations < 0 || !(cfg.step_size >= 0.0)) throw ConfigError("invalid classifier training config");
  const std::size_t dim = pool.front().x.size();

  Rng init_rng(derive_seed(cfg.seed, "classifier/init"));
  std::vector<std::size_t> widths{dim + static_cast<std::size_t>(cfg.time_embed.width)};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(static_cast<std::size_t>(num_labels));
  ClassifierTrainResult result{MlpNoisyClassifier(Mlp::random(widths, init_rng), cfg.time_embed, sched.steps()), {}, {}};

  Rng rng(derive_seed(cfg.seed, "classifier/train"));
  GradBundle grad = result.classifier.trunk().zero_grad();
  const int n = static_cast<int>(pool.size());
  const double weight = 1.0 / cfg.batch_size;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    grad.set_zero();
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const LabeledPoint& p = pool[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
      const int t = rng.uniform_int(1, sched.steps());
      const Vec eps = rng.normal_vec(dim);
      const Vec x_t = forward_noise(sched, p.x, t, eps);
      loss += result.classifier.accumulate_cross_entropy(x_t, t, p.y, weight, grad);
    }
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "non-finite classifier loss at iteration " << it;
      throw NumericError(msg.str());
    }
    result.classifier.mutable_trunk().apply_gradient(grad, cfg.step_size);
    result.loss_trace.push_back(loss);
  }

  Rng diag_rng(derive_seed(cfg.seed, "classifier/diagnostic"));
  for (int t : cfg.diagnostic_steps) {
    if (t < 1 || t > sched.steps()) continue;
    int correct = 0;
    for (const auto& p : pool) {
      const Vec x_t = forward_noise(sched, p.x, t, diag_rng.normal_vec(dim));
      correct += result.classifier.predict(x_t, t) == p.y ? 1 : 0;
    }
    result.accuracy_by_t.emplace_back(t, static_cast<double>(correct) / n);
  }
  return result;
}

ClassifierTrainResult train_domain_classifier(const DomainDataset& source, const DomainDataset& target,
                                              const NoiseSchedule& sched, const ClassifierTrainConfig& cfg) {
  if (source.empty() || target.empty()) throw ConfigError("domain classifier needs both domains non-empty");
  if (source.dim != target.dim) throw ShapeError("source and target dims differ");
  std::vector<LabeledPoint> pool;
  pool.reserve(source.size() + target.size());
  for (const auto& p : source.points) pool.push_back({p.x, kSourceLabel, Domain::Source});
  for (const auto& p : target.points) pool.push_back({p.x, kTargetLabel, Domain::Target});
  return train_noisy_classifier(pool, 2, sched, cfg);
}

Vec grad_log_domain_prob(const NoisyClassifier& clf, std::span<const double> x_t, int t, int domain_label) {
  return clf.grad_log_prob(x_t, t, domain_label);
}

double guidance_coefficient(GuidanceRule rule, const NoiseSchedule& sched, int t) {
  return rule == GuidanceRule::SigmaT ? sched.sigma(t) : sched.sqrt_one_minus_alpha_bar(t);
}

Vec guided_noise(const NoisePredictor& model, const NoisyClassifier* clf, const GuidanceConfig& gcfg,
                 const NoiseSchedule& sched, std::span<const double> x_t, int t, const Condition& c) {
  Vec eps = model.predict_noise(x_t, t, c);
  if (clf == nullptr || gcfg.scale == 0.0) return eps;
  const Vec g = clf->grad_log_prob(x_t, t, gcfg.target_label);
  axpy(-gcfg.scale * guidance_coefficient(gcfg.rule, sched, t), g, eps);
  return eps;
}

GuidedPredictor::GuidedPredictor(const NoisePredictor& base, const NoiseSchedule& sched,
                                 std::vector<GuidanceTerm> terms, GuidanceRule rule)
    : base_(base), sched_(sched), terms_(std::move(terms)), rule_(rule) {
  for (const auto& term : terms_)
    if (term.scale != 0.0 && term.classifier == nullptr) throw ConfigError("guidance term with non-zero scale has no classifier");
}

Vec GuidedPredictor::predict_noise(std::span<const double> x_t, int t, const Condition& c) const {
  Vec eps = base_.predict_noise(x_t, t, c);
  for (const auto& term : terms_) {
    if (term.scale == 0.0) continue;
    const int label = term.label < 0 ? c.cls : term.label;
    const Vec g = term.classifier->grad_log_prob(x_t, t, label);
    axpy(-term.scale * guidance_coefficient(rule_, sched_, t), g, eps);
  }
  return eps;
}

}  // namespace dacdm
