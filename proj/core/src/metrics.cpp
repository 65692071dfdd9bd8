#include "dacdm/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dacdm/error.hpp"
#include "dacdm/rng.hpp"

namespace dacdm {

ProbeKind parse_probe(const std::string& name) {
  if (name == "linear") return ProbeKind::Linear;
  if (name == "mlp") return ProbeKind::Mlp;
  throw ConfigError("unknown probe '" + name + "'");
}

std::string probe_name(ProbeKind p) { return p == ProbeKind::Linear ? "linear" : "mlp"; }

// -------------------------------------------------------------- A-distance

namespace {

struct Sample {
  Vec x;
  int label;
};

double probe_error(const Mlp& probe, std::span<const Sample> data, const Vec& mean, const Vec& scale) {
  std::size_t wrong = 0;
  Vec z(mean.size());
  for (const auto& s : data) {
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = (s.x[j] - mean[j]) / scale[j];
    if (static_cast<int>(argmax(probe.predict(z))) != s.label) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

}  // namespace

ADistanceResult a_distance_detail(const DomainDataset& a, const DomainDataset& b, const ADistanceConfig& cfg) {
  if (a.dim != b.dim) throw ShapeError("A-distance domains differ in dim");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  Rng rng(derive_seed(cfg.seed, "a_distance/split"));

  auto take = [&](const DomainDataset& ds, std::size_t n) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    idx.resize(n);
    return idx;
  };
  const std::size_t na = cfg.balance ? std::min(a.size(), b.size()) : a.size();
  const std::size_t nb = cfg.balance ? na : b.size();
  const auto ia = take(a, na);
  const auto ib = take(b, nb);
  const auto ta = static_cast<std::size_t>(std::floor(na * cfg.train_fraction));
  const auto tb = static_cast<std::size_t>(std::floor(nb * cfg.train_fraction));
  if (ta < 1 || tb < 1 || na - ta < 1 || nb - tb < 1) throw ConfigError("too few points to split for A-distance");

  std::vector<Sample> train, test;
  for (std::size_t i = 0; i < na; ++i) (i < ta ? train : test).push_back({a.points[ia[i]].x, 0});
  for (std::size_t i = 0; i < nb; ++i) (i < tb ? train : test).push_back({b.points[ib[i]].x, 1});

  const auto d = static_cast<std::size_t>(a.dim);
  Vec mean(d, 0.0), scale(d, 0.0);
  for (const auto& s : train) axpy(1.0 / train.size(), s.x, mean);
  for (const auto& s : train)
    for (std::size_t j = 0; j < d; ++j) scale[j] += (s.x[j] - mean[j]) * (s.x[j] - mean[j]) / train.size();
  for (auto& v : scale) v = v > 0.0 ? std::sqrt(v) : 1.0;

  std::vector<std::size_t> widths{d};
  if (cfg.probe == ProbeKind::Mlp) widths.push_back(cfg.probe_hidden);
  widths.push_back(2);
  Rng init(derive_seed(cfg.seed, "a_distance/probe"));
  Mlp probe = Mlp::random(widths, init);

  // Full-batch gradient descent on the class-balanced cross-entropy.
  const double wa = 0.5 / ta, wb = 0.5 / tb;
  GradBundle grad = probe.zero_grad();
  std::vector<Vec> inputs(train.size(), Vec(d));
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) inputs[i][j] = (train[i].x[j] - mean[j]) / scale[j];
  for (int it = 0; it < cfg.iterations; ++it) {
    grad.set_zero();
    for (std::size_t i = 0; i < train.size(); ++i) {
      MlpCache c;
      const Vec p = softmax(probe.forward(inputs[i], c));
      const double w = train[i].label == 0 ? wa : wb;
      Vec g{w * p[0], w * p[1]};
      g[static_cast<std::size_t>(train[i].label)] -= w;
      probe.backward(c, g, &grad);
    }
    probe.apply_gradient(grad, cfg.step_size);
  }
  if (!probe.all_finite()) throw NumericError("A-distance probe diverged");

  ADistanceResult r;
  r.test_error = probe_error(probe, test, mean, scale);
  r.distance = std::clamp(2.0 * (1.0 - 2.0 * r.test_error), 0.0, 2.0);
  r.n_train = train.size();
  r.n_test = test.size();
  return r;
}

double a_distance(const DomainDataset& a, const DomainDataset& b, const ADistanceConfig& cfg) {
  return a_distance_detail(a, b, cfg).distance;
}

// ---------------------------------------------------------------- H delta H

bool HypothesisGrid::predict(std::size_t h, std::span<const double> x) const {
  return dot(weights[h], x) + biases[h] > 0.0;
}

HypothesisGrid make_grid(int dim, double radius, int num_angles, int num_biases) {
  if (dim < 1 || num_angles < 1 || num_biases < 1) throw ConfigError("grid needs dim, angles and biases >= 1");
  std::vector<Vec> dirs;
  if (dim == 2) {
    for (int k = 0; k < num_angles; ++k) {
      const double th = 2.0 * std::numbers::pi * k / num_angles;
      dirs.push_back({std::cos(th), std::sin(th)});
    }
  } else {
    std::vector<int> digit(static_cast<std::size_t>(dim), -1);
    while (true) {
      Vec w(digit.begin(), digit.end());
      const double norm = std::sqrt(dot(w, w));
      if (norm > 0.0) {
        for (auto& v : w) v /= norm;
        dirs.push_back(std::move(w));
      }
      std::size_t j = 0;
      while (j < digit.size() && digit[j] == 1) digit[j++] = -1;
      if (j == digit.size()) break;
      ++digit[j];
    }
  }
  HypothesisGrid grid;
  grid.dim = dim;
  for (const auto& w : dirs) {
    for (int k = 0; k < num_biases; ++k) {
      const double c = num_biases == 1 ? 0.0 : -radius + 2.0 * radius * k / (num_biases - 1);
      grid.weights.push_back(w);
      grid.biases.push_back(c);
    }
  }
  return grid;
}

HypothesisGrid make_grid(std::span<const DomainDataset* const> data, int num_angles, int num_biases) {
  int dim = 0;
  double radius = 0.0;
  for (const auto* ds : data) {
    if (!ds || ds->empty()) continue;
    if (dim != 0 && ds->dim != dim) throw ShapeError("grid datasets differ in dim");
    dim = ds->dim;
    for (const auto& p : ds->points) radius = std::max(radius, std::sqrt(dot(p.x, p.x)));
  }
  if (dim == 0) throw ConfigError("grid needs at least one non-empty dataset");
  return make_grid(dim, radius, num_angles, num_biases);
}

namespace {

using Bits = std::vector<std::uint64_t>;

std::vector<Bits> prediction_bits(const DomainDataset& ds, const HypothesisGrid& grid) {
  const std::size_t words = (ds.size() + 63) / 64;
  std::vector<Bits> out(grid.size(), Bits(words, 0));
  for (std::size_t h = 0; h < grid.size(); ++h)
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (grid.predict(h, ds.points[i].x)) out[h][i / 64] |= std::uint64_t{1} << (i % 64);
  return out;
}

std::size_t disagreements(const Bits& a, const Bits& b) {
  std::size_t n = 0;
  for (std::size_t w = 0; w < a.size(); ++w) n += static_cast<std::size_t>(std::popcount(a[w] ^ b[w]));
  return n;
}

}  // namespace

double hdh_distance(const DomainDataset& a, const DomainDataset& b, const HypothesisGrid& grid, std::size_t max_pairs) {
  if (grid.size() == 0) throw ConfigError("hypothesis grid is empty");
  if (grid.size() * grid.size() > max_pairs) throw ConfigError("hypothesis grid exceeds the pair budget");
  if (a.empty() || b.empty()) throw ConfigError("H-delta-H distance needs non-empty domains");
  if (a.dim != grid.dim || b.dim != grid.dim) throw ShapeError("grid dim differs from data dim");
  const auto pa = prediction_bits(a, grid);
  const auto pb = prediction_bits(b, grid);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double best = 0.0;
  for (std::size_t h = 0; h < grid.size(); ++h) {
    for (std::size_t g = h + 1; g < grid.size(); ++g) {
      const double diff = std::abs(disagreements(pa[h], pa[g]) / na - disagreements(pb[h], pb[g]) / nb);
      best = std::max(best, diff);
    }
  }
  return 2.0 * best;
}

// -------------------------------------------------------------------- bound

double complexity_term(int vc_dim, std::size_t n, double delta) {
  const double nn = static_cast<double>(n);
  return 4.0 * std::sqrt((2.0 * vc_dim * std::log(2.0 * nn) + std::log(2.0 / delta)) / nn);
}

double confidence_term(int vc_dim, std::size_t n, double delta) {
  return std::sqrt(std::log(2.0 * vc_dim / delta) / (2.0 * static_cast<double>(n)));
}

KeyValues BoundReport::to_key_values() const {
  KeyValues kv;
  kv.set("eta", eta);
  kv.set("emp_risk_source", emp_risk_source);
  kv.set("emp_risk_generated", emp_risk_generated);
  kv.set("dist_s_t", dist_s_t);
  kv.set("dist_g_t", dist_g_t);
  kv.set("distance_kind", std::string("grid lower bound"));
  kv.set("C", complexity);
  kv.set("eps_term", eps_term);
  kv.set("rhs", rhs);
  kv.set("lhs", lhs);
  kv.set("V", vc_dim);
  kv.set("delta", delta);
  kv.set("n_aug", static_cast<std::uint64_t>(n_aug));
  kv.set("grid_size", static_cast<std::uint64_t>(grid_size));
  kv.set("holds", std::string(holds() ? "true" : "false"));
  return kv;
}

namespace {

double error_rate(const TaskModel& model, const DomainDataset& ds) {
  if (ds.empty()) return 0.0;
  std::size_t wrong = 0;
  for (const auto& p : ds.points) {
    if (p.y < 0 || p.y >= ds.num_classes) throw ConfigError("bound check needs ground-truth labels on every point");
    if (model.predict(p.x) != p.y) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

}  // namespace

BoundReport bound_report(const TaskModel& f_star_source, const TaskModel& f_hat, const DomainDataset& source,
                         const DomainDataset& generated, const DomainDataset& target, const HypothesisGrid& grid,
                         double delta) {
  if (source.empty() || target.empty()) throw ConfigError("bound report needs source and target data");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  BoundReport r;
  r.delta = delta;
  r.vc_dim = grid.vc_dimension();
  r.grid_size = grid.size();
  r.n_aug = source.size() + generated.size();
  r.eta = static_cast<double>(source.size()) / static_cast<double>(r.n_aug);
  r.emp_risk_source = error_rate(f_star_source, source);
  r.dist_s_t = hdh_distance(source, target, grid);
  if (!generated.empty()) {
    r.emp_risk_generated = error_rate(f_star_source, generated);
    r.dist_g_t = hdh_distance(generated, target, grid);
  }
  r.complexity = complexity_term(r.vc_dim, r.n_aug, delta);
  r.eps_term = confidence_term(r.vc_dim, r.n_aug, delta);
  r.rhs = r.eta * (r.emp_risk_source + 0.5 * r.dist_s_t + r.complexity) + r.eps_term +
          (1.0 - r.eta) * (r.emp_risk_generated + 0.5 * r.dist_g_t + r.complexity);
  r.lhs = error_rate(f_hat, target);
  return r;
}

}  // namespace dacdm
