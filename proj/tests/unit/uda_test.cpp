#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dacdm/error.hpp"
#include "dacdm/uda.hpp"
#include "support.hpp"

namespace dacdm {
namespace {

using testing::blobs;
using testing::random_vec;

UdaConfig small_config(Regularizer r) {
  UdaConfig cfg;
  cfg.regularizer = r;
  cfg.feature_hidden = {5};
  cfg.feature_dim = 4;
  cfg.domain_hidden = {3};
  cfg.tradeoff = 0.7;
  return cfg;
}

std::vector<LabeledPoint> random_batch(Rng& rng, int n, int k, Domain d) {
  std::vector<LabeledPoint> out;
  for (int i = 0; i < n; ++i) out.push_back({random_vec(rng, 2), rng.uniform_int(0, k - 1), d});
  return out;
}

struct Groups {
  std::vector<std::span<double>> params[3];
  std::vector<std::span<const double>> grads[3];
};

// Splits TaskModel coordinates into extractor / label head / domain head blocks.
Groups split(TaskModel& m, const TaskModel::Gradient& g) {
  Groups out;
  const std::size_t n0 = 2 * m.extractor().num_layers(), n1 = 2 * m.label_head().num_layers();
  auto params = m.coordinates();
  auto grads = g.coordinates();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const int grp = i < n0 ? 0 : i < n0 + n1 ? 1 : 2;
    out.params[grp].push_back(params[i]);
    out.grads[grp].push_back(grads[i]);
  }
  return out;
}

// The extractor receives the negated, adversarially weighted domain gradient;
// the domain head descends the weighted domain loss; the label head only sees CE.
TEST(DomainAdversarial, GradientReversal) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const UdaConfig cfg = small_config(Regularizer::DomainAdversarial);
    TaskModel m = TaskModel::create(2, 3, cfg, rng);
    const auto lb = random_batch(rng, 4, 3, Domain::Source);
    const auto tb = random_batch(rng, 4, 3, Domain::Target);
    const double adv = 0.2 + 0.8 * rng.uniform();
    auto grad = m.zero_grad();
    uda_batch_objective(m, lb, tb, cfg, adv, grad);
    Groups g = split(m, grad);
    auto eval = [&] {
      auto scratch = m.zero_grad();
      return uda_batch_objective(m, lb, tb, cfg, adv, scratch);
    };
    const double b = cfg.tradeoff;
    EXPECT_LE(finite_diff_max_rel_error(g.params[0], g.grads[0], [&] {
                const auto o = eval();
                return o.task_loss - adv * b * o.reg_loss;
              }), 1e-5) << "extractor, seed " << seed;
    EXPECT_LE(finite_diff_max_rel_error(g.params[1], g.grads[1], [&] { return eval().task_loss; }), 1e-5)
        << "label head, seed " << seed;
    EXPECT_LE(finite_diff_max_rel_error(g.params[2], g.grads[2], [&] { return b * eval().reg_loss; }), 1e-5)
        << "domain head, seed " << seed;
  }
}

TEST(ClassConfusion, ObjectiveGradient) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(100 + seed);
    const UdaConfig cfg = small_config(Regularizer::ClassConfusion);
    TaskModel m = TaskModel::create(2, 3, cfg, rng);
    const auto lb = random_batch(rng, 4, 3, Domain::Source);
    const auto tb = random_batch(rng, 5, 3, Domain::Target);
    auto grad = m.zero_grad();
    uda_batch_objective(m, lb, tb, cfg, 1.0, grad);
    Groups g = split(m, grad);
    auto total = [&] {
      auto scratch = m.zero_grad();
      const auto o = uda_batch_objective(m, lb, tb, cfg, 1.0, scratch);
      return o.task_loss + cfg.tradeoff * o.reg_loss;
    };
    for (int grp = 0; grp < 2; ++grp)
      EXPECT_LE(finite_diff_max_rel_error(g.params[grp], g.grads[grp], total), 1e-5) << "seed " << seed;
    for (auto s : g.grads[2])
      for (double v : s) EXPECT_EQ(v, 0.0);
  }
}

TEST(ClassConfusion, LossValuesAndLogitGradient) {
  // One-hot, perfectly confident and diverse predictions: no confusion.
  const std::vector<Vec> sure{{100.0, 0.0}, {0.0, 100.0}};
  EXPECT_NEAR(class_confusion_loss(sure, 1.0, nullptr), 0.0, 1e-12);
  // Uniform predictions: L = 1 - 1/K.
  const std::vector<Vec> flat{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  EXPECT_NEAR(class_confusion_loss(flat, 2.5, nullptr), 1.0 - 1.0 / 3.0, 1e-12);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec> z;
    for (int i = 0; i < 4; ++i) z.push_back(random_vec(rng, 3, 2.0));
    std::vector<Vec> gz;
    class_confusion_loss(z, 2.5, &gz);
    std::vector<std::span<double>> coords;
    std::vector<std::span<const double>> grads;
    for (int i = 0; i < 4; ++i) {
      coords.emplace_back(z[i]);
      grads.emplace_back(gz[i]);
    }
    EXPECT_LE(finite_diff_max_rel_error(coords, grads, [&] { return class_confusion_loss(z, 2.5, nullptr); }), 1e-5);
  }
  EXPECT_THROW(class_confusion_loss({}, 1.0, nullptr), ConfigError);
  EXPECT_THROW(class_confusion_loss(sure, 0.0, nullptr), ConfigError);
}

TEST(TrainUda, ErmFitsSeparableSource) {
  Rng rng(4);
  const DomainDataset source = blobs(rng, {{-2.0, 0.0}, {2.0, 0.0}, {0.0, 3.0}}, 40, 0.3, Domain::Source);
  const DomainDataset target = blobs(rng, {{-2.0, 1.0}, {2.0, 1.0}, {0.0, 4.0}}, 40, 0.3, Domain::Target);
  for (Regularizer r : {Regularizer::None, Regularizer::DomainAdversarial}) {
    UdaConfig cfg;
    cfg.regularizer = r;
    cfg.tradeoff = r == Regularizer::None ? 1.0 : 0.0;
    cfg.iterations = 1500;
    EXPECT_DOUBLE_EQ(evaluate(train_uda(source, target, cfg).model, source).accuracy, 1.0);
  }
}

TEST(TrainUda, NoShiftKeepsTargetAtSourceAccuracy) {
  double gap = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TwoMoonsShift shift;
    shift.rotation_deg = 0.0;
    shift.translation = {0.0, 0.0};
    shift.n_source = 300;
    shift.n_target = 300;
    const auto [s, t] = gen_two_moons_shift(shift, seed);
    UdaConfig cfg;
    cfg.seed = seed;
    cfg.iterations = 2000;
    const TaskModel m = train_uda(s, t, cfg).model;
    gap += evaluate(m, t).accuracy - evaluate(m, s).accuracy;
  }
  EXPECT_LE(std::abs(gap / 5.0), 0.02);
}

TEST(TrainUda, DeterministicAndIgnoresTargetLabels) {
  Rng rng(5);
  const DomainDataset source = blobs(rng, {{-1.0, 0.0}, {1.0, 0.0}}, 20, 0.3, Domain::Source);
  DomainDataset target = blobs(rng, {{-1.0, 1.0}, {1.0, 1.0}}, 20, 0.3, Domain::Target);
  UdaConfig cfg;
  cfg.iterations = 200;
  const auto a = train_uda(source, target, cfg);
  for (auto& p : target.points) p.y = 0;
  const auto b = train_uda(source, target, cfg);
  EXPECT_EQ(a.task_trace, b.task_trace);
  EXPECT_EQ(a.model.logits(Vec{0.3, 0.3}), b.model.logits(Vec{0.3, 0.3}));
  EXPECT_THROW(train_uda(source, DomainDataset{{}, 2, 2}, cfg), ConfigError);
  cfg.tradeoff = -1.0;
  EXPECT_THROW(train_uda(source, target, cfg), ConfigError);
}

TEST(TrainUda, DivergenceIsReported) {
  Rng rng(6);
  const DomainDataset source = blobs(rng, {{-1.0, 0.0}, {1.0, 0.0}}, 20, 0.3, Domain::Source);
  const DomainDataset target = blobs(rng, {{-1.0, 1.0}, {1.0, 1.0}}, 20, 0.3, Domain::Target);
  UdaConfig cfg;
  cfg.step_size = 1e300;
  cfg.anneal = false;
  cfg.iterations = 500;
  EXPECT_THROW(train_uda(source, target, cfg), NumericError);
}

TEST(Evaluate, ConfusionFixture) {
  DomainDataset d{{}, 3, 1};
  const int ys[] = {0, 0, 0, 1, 1};
  for (int y : ys) d.points.push_back({{0.0}, y, Domain::Target});
  const EvalResult r = evaluate_predictions(d, {0, 0, 1, 1, 0});
  EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(r.per_class[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[1], 0.5);
  EXPECT_TRUE(std::isnan(r.per_class[2]));
  EXPECT_EQ(r.confusion(0, 1), 1.0);
  EXPECT_EQ(r.confusion(1, 0), 1.0);
  EXPECT_EQ(r.count, 5u);
  std::ostringstream out;
  write_eval_csv(r, out);
  EXPECT_EQ(out.str().substr(0, 15), "class,accuracy\n");
  EXPECT_NE(out.str().find("all,0.6\n"), std::string::npos);
  EXPECT_THROW(evaluate_predictions(d, {0}), ShapeError);
}

TEST(Augment, EtaAndPseudoLabels) {
  Rng rng(7);
  const DomainDataset source = blobs(rng, {{-1.0, 0.0}, {1.0, 0.0}}, 30, 0.3, Domain::Source);
  const DomainDataset gen = blobs(rng, {{-1.0, 1.0}, {1.0, 1.0}}, 10, 0.3, Domain::Generated);
  const AugmentedSource aug = augment_source(source, gen);
  EXPECT_DOUBLE_EQ(aug.eta, 0.75);
  EXPECT_EQ(aug.data.size(), 80u);
  EXPECT_DOUBLE_EQ(augment_source(source, DomainDataset{{}, 2, 2}).eta, 1.0);

  UdaConfig cfg;
  cfg.iterations = 100;
  const TaskModel m = train_uda(source, gen, cfg).model;
  const DomainDataset pl = pseudo_label(m, gen);
  for (std::size_t i = 0; i < pl.size(); ++i) {
    EXPECT_EQ(pl.points[i].y, m.predict(gen.points[i].x));
    EXPECT_EQ(pl.points[i].x, gen.points[i].x);
  }
}

TEST(Regularizer, NamesRoundTrip) {
  for (auto r : {Regularizer::DomainAdversarial, Regularizer::ClassConfusion, Regularizer::None})
    EXPECT_EQ(parse_regularizer(regularizer_name(r)), r);
  EXPECT_THROW(parse_regularizer("mmd"), ConfigError);
}

}  // namespace
}  // namespace dacdm
