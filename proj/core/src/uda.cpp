#include "dacdm/uda.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "dacdm/error.hpp"
#include "dacdm/rng.hpp"

namespace dacdm {

Regularizer parse_regularizer(const std::string& name) {
  if (name == "domain_adversarial") return Regularizer::DomainAdversarial;
  if (name == "class_confusion") return Regularizer::ClassConfusion;
  if (name == "none") return Regularizer::None;
  throw ConfigError("unknown regularizer '" + name + "'");
}

std::string regularizer_name(Regularizer r) {
  switch (r) {
    case Regularizer::DomainAdversarial: return "domain_adversarial";
    case Regularizer::ClassConfusion: return "class_confusion";
    case Regularizer::None: return "none";
  }
  return "none";
}

// ---------------------------------------------------------------- TaskModel

void TaskModel::Gradient::set_zero() {
  extractor.set_zero();
  label_head.set_zero();
  domain_head.set_zero();
}

std::vector<std::span<const double>> TaskModel::Gradient::coordinates() const {
  auto out = extractor.coordinates();
  for (auto s : label_head.coordinates()) out.push_back(s);
  for (auto s : domain_head.coordinates()) out.push_back(s);
  return out;
}

TaskModel::TaskModel(Mlp extractor, Mlp label_head, Mlp domain_head)
    : extractor_(std::move(extractor)), label_head_(std::move(label_head)), domain_head_(std::move(domain_head)) {
  if (label_head_.input_dim() != extractor_.output_dim() || domain_head_.input_dim() != extractor_.output_dim())
    throw ShapeError("head input width differs from feature width");
  if (domain_head_.output_dim() != 2) throw ShapeError("domain head must produce two logits");
  if (label_head_.output_dim() < 1) throw ShapeError("label head needs at least one class");
}

TaskModel TaskModel::create(int dim, int num_classes, const UdaConfig& cfg, Rng& rng) {
  if (dim < 1 || num_classes < 1) throw ConfigError("task model needs dim >= 1 and K >= 1");
  std::vector<std::size_t> fw{static_cast<std::size_t>(dim)};
  fw.insert(fw.end(), cfg.feature_hidden.begin(), cfg.feature_hidden.end());
  fw.push_back(cfg.feature_dim);
  const std::vector<std::size_t> lw{cfg.feature_dim, static_cast<std::size_t>(num_classes)};
  std::vector<std::size_t> dw{cfg.feature_dim};
  dw.insert(dw.end(), cfg.domain_hidden.begin(), cfg.domain_hidden.end());
  dw.push_back(2);
  Mlp extractor = Mlp::random(fw, rng);
  Mlp label_head = Mlp::random(lw, rng);
  Mlp domain_head = Mlp::random(dw, rng);
  return TaskModel(std::move(extractor), std::move(label_head), std::move(domain_head));
}

Vec TaskModel::logits(std::span<const double> x) const { return label_head_.predict(extractor_.predict(x)); }

int TaskModel::predict(std::span<const double> x) const { return static_cast<int>(argmax(logits(x))); }

TaskModel::Gradient TaskModel::zero_grad() const {
  return {extractor_.zero_grad(), label_head_.zero_grad(), domain_head_.zero_grad()};
}

void TaskModel::apply_gradient(const Gradient& grad, double step) {
  extractor_.apply_gradient(grad.extractor, step);
  label_head_.apply_gradient(grad.label_head, step);
  domain_head_.apply_gradient(grad.domain_head, step);
}

std::vector<std::span<double>> TaskModel::coordinates() {
  auto out = extractor_.coordinates();
  for (auto s : label_head_.coordinates()) out.push_back(s);
  for (auto s : domain_head_.coordinates()) out.push_back(s);
  return out;
}

Checkpoint TaskModel::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = "task_model";
  ck.networks.emplace_back("extractor", extractor_);
  ck.networks.emplace_back("label_head", label_head_);
  ck.networks.emplace_back("domain_head", domain_head_);
  return ck;
}

TaskModel TaskModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "task_model") throw ParseError("checkpoint kind '" + ck.kind + "' is not a task model", 0);
  return TaskModel(ck.network("extractor"), ck.network("label_head"), ck.network("domain_head"));
}

// ---------------------------------------------------------------- objective

double class_confusion_loss(const std::vector<Vec>& logits, double temperature, std::vector<Vec>* logit_grad) {
  if (logits.empty()) throw ConfigError("class confusion needs a non-empty batch");
  if (!(temperature > 0.0)) throw ConfigError("confusion temperature must be > 0");
  const std::size_t n = logits.size(), k = logits.front().size();
  std::vector<Vec> p(n);
  Vec q(k, 0.0), s(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Vec scaled = logits[i];
    for (auto& v : scaled) v /= temperature;
    p[i] = softmax(scaled);
    for (std::size_t j = 0; j < k; ++j) {
      q[j] += p[i][j] * p[i][j];
      s[j] += p[i][j];
    }
  }
  double loss = 1.0;
  for (std::size_t j = 0; j < k; ++j) loss -= q[j] / s[j] / static_cast<double>(k);
  if (logit_grad) {
    logit_grad->assign(n, Vec(k));
    for (std::size_t i = 0; i < n; ++i) {
      Vec g(k);
      double inner = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        g[j] = -(2.0 * p[i][j] / s[j] - q[j] / (s[j] * s[j])) / static_cast<double>(k);
        inner += g[j] * p[i][j];
      }
      for (std::size_t j = 0; j < k; ++j) (*logit_grad)[i][j] = p[i][j] * (g[j] - inner) / temperature;
    }
  }
  return loss;
}

UdaObjective uda_batch_objective(const TaskModel& model, std::span<const LabeledPoint> labeled,
                                 std::span<const LabeledPoint> target, const UdaConfig& cfg, double adv_weight,
                                 TaskModel::Gradient& grad) {
  if (labeled.empty()) throw ConfigError("labeled batch is empty");
  const bool needs_target = cfg.regularizer != Regularizer::None && cfg.tradeoff != 0.0;
  if (needs_target && target.empty()) throw ConfigError("target batch is empty");
  const Mlp& fx = model.extractor();
  const Mlp& lh = model.label_head();
  const Mlp& dh = model.domain_head();
  const double beta = cfg.tradeoff;
  UdaObjective obj;

  const std::size_t nl = labeled.size(), nt = needs_target ? target.size() : 0;
  std::vector<MlpCache> feat_cache(nl + nt);
  std::vector<Vec> feat(nl + nt), feat_grad(nl + nt);
  for (std::size_t i = 0; i < nl; ++i) feat[i] = fx.forward(labeled[i].x, feat_cache[i]);
  for (std::size_t i = 0; i < nt; ++i) feat[nl + i] = fx.forward(target[i].x, feat_cache[nl + i]);
  for (auto& g : feat_grad) g.assign(fx.output_dim(), 0.0);

  const double inv_l = 1.0 / static_cast<double>(nl);
  for (std::size_t i = 0; i < nl; ++i) {
    MlpCache c;
    const Vec z = lh.forward(feat[i], c);
    const Vec lp = log_softmax(z);
    const auto y = static_cast<std::size_t>(labeled[i].y);
    if (y >= lp.size()) throw ConfigError("label out of range for the task model");
    obj.task_loss -= inv_l * lp[y];
    Vec gz(lp.size());
    for (std::size_t k = 0; k < lp.size(); ++k) gz[k] = inv_l * std::exp(lp[k]);
    gz[y] -= inv_l;
    axpy(1.0, lh.backward(c, gz, &grad.label_head).input_grad, feat_grad[i]);
  }

  if (needs_target && cfg.regularizer == Regularizer::DomainAdversarial) {
    const double inv_n = 1.0 / static_cast<double>(nl + nt);
    for (std::size_t i = 0; i < nl + nt; ++i) {
      const std::size_t d = i < nl ? 0 : 1;
      MlpCache c;
      const Vec lp = log_softmax(dh.forward(feat[i], c));
      obj.reg_loss -= inv_n * lp[d];
      Vec gz(2);
      for (std::size_t k = 0; k < 2; ++k) gz[k] = beta * inv_n * std::exp(lp[k]);
      gz[d] -= beta * inv_n;
      axpy(-adv_weight, dh.backward(c, gz, &grad.domain_head).input_grad, feat_grad[i]);
    }
  } else if (needs_target && cfg.regularizer == Regularizer::ClassConfusion) {
    std::vector<MlpCache> caches(nt);
    std::vector<Vec> z(nt);
    for (std::size_t i = 0; i < nt; ++i) z[i] = lh.forward(feat[nl + i], caches[i]);
    std::vector<Vec> gz;
    obj.reg_loss = class_confusion_loss(z, cfg.confusion_temperature, &gz);
    for (std::size_t i = 0; i < nt; ++i) {
      for (auto& v : gz[i]) v *= beta;
      axpy(1.0, lh.backward(caches[i], gz[i], &grad.label_head).input_grad, feat_grad[nl + i]);
    }
  }

  for (std::size_t i = 0; i < nl + nt; ++i) fx.backward(feat_cache[i], feat_grad[i], &grad.extractor);
  return obj;
}

// ----------------------------------------------------------------- training

UdaTrainResult train_uda(const DomainDataset& labeled, const DomainDataset& unlabeled_target, const UdaConfig& cfg) {
  if (labeled.empty()) throw ConfigError("labeled set is empty");
  if (unlabeled_target.empty()) throw ConfigError("unlabeled target set is empty");
  if (labeled.dim != unlabeled_target.dim) throw ShapeError("labeled and target dims differ");
  if (!std::isfinite(cfg.tradeoff) || cfg.tradeoff < 0.0) throw ConfigError("trade-off must be finite and >= 0");
  if (cfg.batch_size < 1 || cfg.iterations < 0) throw ConfigError("invalid UDA batch size or iteration count");

  Rng init_rng(derive_seed(cfg.seed, "uda/init"));
  UdaTrainResult result{TaskModel::create(labeled.dim, labeled.num_classes, cfg, init_rng), {}, {}};
  Rng rng(derive_seed(cfg.seed, "uda/train"));
  auto grad = result.model.zero_grad();
  const int nl = static_cast<int>(labeled.size()), nt = static_cast<int>(unlabeled_target.size());
  std::vector<LabeledPoint> lb(static_cast<std::size_t>(cfg.batch_size)), tb(static_cast<std::size_t>(cfg.batch_size));
  result.task_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  result.reg_trace.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int it = 0; it < cfg.iterations; ++it) {
    const double p = cfg.iterations > 0 ? static_cast<double>(it) / cfg.iterations : 0.0;
    const double lr = cfg.anneal ? cfg.step_size / std::pow(1.0 + 10.0 * p, 0.75) : cfg.step_size;
    const double adv = cfg.ramp ? 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0 : 1.0;
    for (auto& pt : lb) pt = labeled.points[static_cast<std::size_t>(rng.uniform_int(0, nl - 1))];
    for (auto& pt : tb) pt = unlabeled_target.points[static_cast<std::size_t>(rng.uniform_int(0, nt - 1))];
    grad.set_zero();
    const UdaObjective obj = uda_batch_objective(result.model, lb, tb, cfg, adv, grad);
    if (!std::isfinite(obj.task_loss) || !std::isfinite(obj.reg_loss)) {
      std::ostringstream msg;
      msg << "non-finite UDA loss at iteration " << it << " (task " << obj.task_loss << ", regularizer "
          << obj.reg_loss << ", step " << lr << ")";
      throw NumericError(msg.str());
    }
    result.model.apply_gradient(grad, lr);
    result.task_trace.push_back(obj.task_loss);
    result.reg_trace.push_back(obj.reg_loss);
  }
  const TaskModel& m = result.model;
  if (!m.extractor().all_finite() || !m.label_head().all_finite() || !m.domain_head().all_finite())
    throw NumericError("UDA parameters became non-finite");
  return result;
}

// ------------------------------------------------------- labels and eval

DomainDataset pseudo_label(const TaskModel& model, const DomainDataset& target) {
  DomainDataset out = target;
  for (auto& p : out.points) p.y = model.predict(p.x);
  return out;
}

Labeler make_labeler(const TaskModel& model) {
  return [&model](std::span<const double> x) { return model.predict(x); };
}

AugmentedSource augment_source(const DomainDataset& source, const DomainDataset& generated) {
  if (generated.empty()) return {source, 1.0};
  AugmentedSource out{concat(source, generated), 1.0};
  out.eta = static_cast<double>(source.size()) / static_cast<double>(out.data.size());
  return out;
}

EvalResult evaluate_predictions(const DomainDataset& data, const std::vector<int>& predicted) {
  if (predicted.size() != data.size()) throw ShapeError("prediction count differs from dataset size");
  const auto k = static_cast<std::size_t>(data.num_classes);
  EvalResult r;
  r.confusion = Matrix(k, k);
  r.count = data.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = static_cast<std::size_t>(data.points[i].y);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (y >= k || p >= k) throw ConfigError("label out of range in evaluation");
    r.confusion(y, p) += 1.0;
    correct += y == p ? 1 : 0;
  }
  r.accuracy = data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
  r.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < k; ++c) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += r.confusion(c, j);
    if (total > 0.0) r.per_class[c] = r.confusion(c, c) / total;
  }
  return r;
}

EvalResult evaluate(const TaskModel& model, const DomainDataset& data) {
  std::vector<int> predicted;
  predicted.reserve(data.size());
  for (const auto& p : data.points) predicted.push_back(model.predict(p.x));
  return evaluate_predictions(data, predicted);
}

void write_eval_csv(const EvalResult& r, std::ostream& out) {
  out << "class,accuracy\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    out << c << ',' << (std::isnan(r.per_class[c]) ? std::string("nan") : format_double(r.per_class[c])) << '\n';
  out << "all," << format_double(r.accuracy) << '\n';
}

}  // namespace dacdm
