#include <gtest/gtest.h>

#include <cmath>

#include "dacdm/error.hpp"
#include "dacdm/tensor.hpp"
#include "support.hpp"

namespace dacdm {
namespace {

using testing::random_mlp;
using testing::random_vec;
using testing::random_widths;

TEST(Mlp, IdentityLayerPassesInputThrough) {
  Mlp m({DenseLayer{Matrix::identity(2), Vec{0.0, 0.0}}});
  EXPECT_EQ(m.predict(Vec{3.0, 4.0}), (Vec{3.0, 4.0}));
}

TEST(Mlp, OutputLayerIsAffine) {
  Mlp m({DenseLayer{Matrix(1, 2, {1.0, 1.0}), Vec{-7.0}}});
  EXPECT_EQ(m.predict(Vec{3.0, 4.0}), (Vec{0.0}));
}

TEST(Mlp, TwoLayerHandEvaluation) {
  Mlp m({DenseLayer{Matrix(2, 2, {0.5, -0.25, 0.1, 0.2}), Vec{0.1, -0.1}},
         DenseLayer{Matrix(1, 2, {1.0, -1.0}), Vec{0.05}}});
  EXPECT_NEAR(m.predict(Vec{1.0, 0.0})[0], std::tanh(0.6) - std::tanh(0.0) + 0.05, 1e-15);
}

TEST(Mlp, NoLayersIsIdentity) {
  Mlp m;
  EXPECT_EQ(m.predict(Vec{1.5, -2.0}), (Vec{1.5, -2.0}));
}

TEST(Mlp, ZeroNetworkOutputsZero) {
  const std::vector<std::size_t> w{3, 5, 2};
  EXPECT_EQ(Mlp::zeros(w).predict(Vec{1.0, 2.0, 3.0}), (Vec{0.0, 0.0}));
}

TEST(Mlp, ForwardMatchesPredict) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_widths(rng, 3, 2);
    const Mlp m = random_mlp(rng, w);
    const Vec x = random_vec(rng, 3);
    MlpCache cache;
    EXPECT_EQ(m.forward(x, cache), m.predict(x));
  }
}

TEST(Mlp, ShapeErrors) {
  const std::vector<std::size_t> w{2, 3, 1};
  Rng rng(1);
  const Mlp m = Mlp::random(w, rng);
  EXPECT_THROW(m.predict(Vec{1.0}), ShapeError);
  EXPECT_THROW(m.predict(Vec{1.0, 2.0}, Vec{1.0}), ShapeError);
  EXPECT_THROW(Mlp({DenseLayer{Matrix(3, 2), Vec(3)}, DenseLayer{Matrix(1, 2), Vec(1)}}), ShapeError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1.0}), ShapeError);
}

TEST(Mlp, StaleCacheIsRejected) {
  const std::vector<std::size_t> w{2, 3, 1};
  Rng rng(2);
  Mlp m = Mlp::random(w, rng);
  MlpCache cache;
  m.forward(Vec{0.1, 0.2}, cache);
  GradBundle g = m.zero_grad();
  m.apply_gradient(g, 0.1);
  EXPECT_THROW(m.backward(cache, Vec{1.0}, nullptr), StaleCacheError);
}

TEST(Mlp, ZeroStepLeavesParametersUnchanged) {
  Rng rng(4);
  const std::vector<std::size_t> w{2, 4, 2};
  Mlp m = random_mlp(rng, w);
  const Mlp before = m;
  GradBundle g = m.zero_grad();
  for (auto span : g.coordinates())
    for (auto& v : span) v = rng.normal();
  m.apply_gradient(g, 0.0);
  EXPECT_EQ(m, before);
}

// Squared-error loss 0.5 ||f(x) - target||^2 with analytic gradients from backward.
MlpLossFn squared_error_loss(Vec target) {
  return [target](const Mlp& m, std::span<const double> x) {
    MlpCache cache;
    const Vec y = m.forward(x, cache);
    LossEval out;
    Vec g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      g[i] = y[i] - target[i];
      out.loss += 0.5 * g[i] * g[i];
    }
    out.param_grad = m.zero_grad();
    out.input_grad = m.backward(cache, g, &out.param_grad).input_grad;
    return out;
  };
}

TEST(MlpGradient, FiniteDifferencesOverRandomNetworks) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t in = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const std::size_t out = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const auto w = random_widths(rng, in, out);
    const Mlp m = random_mlp(rng, w);
    const Vec x = random_vec(rng, in);
    const Vec target = random_vec(rng, out);
    EXPECT_LE(finite_diff_check(m, x, squared_error_loss(target)), 1e-5) << "seed " << seed;
  }
}

TEST(MlpGradient, OffsetGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(100 + seed);
    const auto w = random_widths(rng, 2, 2);
    const Mlp m = random_mlp(rng, w);
    const Vec x = random_vec(rng, 2);
    Vec offset = random_vec(rng, m.first_width(), 0.5);
    const Vec target = random_vec(rng, 2);
    auto loss = [&] {
      const Vec y = m.predict(x, offset);
      return 0.5 * ((y[0] - target[0]) * (y[0] - target[0]) + (y[1] - target[1]) * (y[1] - target[1]));
    };
    MlpCache cache;
    const Vec y = m.forward(x, cache, offset);
    const Vec g{y[0] - target[0], y[1] - target[1]};
    const MlpBackward back = m.backward(cache, g, nullptr);
    const double err = finite_diff_max_rel_error({std::span<double>(offset)}, {std::span<const double>(back.offset_grad)}, loss);
    EXPECT_LE(err, 1e-5) << "seed " << seed;
  }
}

TEST(MlpGradient, FreeFunctionsAgreeWithMembers) {
  Rng rng(9);
  const std::vector<std::size_t> w{2, 3, 2};
  const Mlp m = random_mlp(rng, w);
  MlpCache cache;
  mlp_forward(m, Vec{0.3, -0.2}, cache);
  const MlpGradients g = mlp_backward(m, cache, Vec{1.0, -1.0});
  GradBundle acc = m.zero_grad();
  const MlpBackward b = m.backward(cache, Vec{1.0, -1.0}, &acc);
  EXPECT_EQ(g.input_grad, b.input_grad);
  EXPECT_EQ(g.params.layers, acc.layers);
}

TEST(GradBundle, AddAndScale) {
  Rng rng(5);
  const std::vector<std::size_t> w{2, 2, 1};
  const Mlp m = random_mlp(rng, w);
  GradBundle a = m.zero_grad(), b = m.zero_grad();
  for (auto s : b.coordinates())
    for (auto& v : s) v = 1.0;
  a.add(b, 2.0);
  a.scale(0.25);
  for (auto s : std::as_const(a).coordinates())
    for (double v : s) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Softmax, StableForLargeLogits) {
  const Vec lp = log_softmax(Vec{1000.0, 1000.0});
  EXPECT_NEAR(lp[0], -std::log(2.0), 1e-12);
  const Vec p = softmax(Vec{-1000.0, 0.0});
  EXPECT_NEAR(p[1], 1.0, 1e-12);
  EXPECT_TRUE(all_finite(p));
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(Vec{0.2, 0.7, 0.7}), 1u);
  EXPECT_EQ(argmax(Vec{1.0, 1.0}), 0u);
}

TEST(RelativeError, SymmetricAndFloored) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), relative_error(1.0, 2.0));
  EXPECT_LE(relative_error(0.0, 1e-12), 1e-8);
}

}  // namespace
}  // namespace dacdm
