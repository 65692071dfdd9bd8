#pragma once

// Hand-rolled generators shared by the unit tests.

#include <cmath>
#include <cstdint>
#include <vector>

#include "dacdm/data.hpp"
#include "dacdm/rng.hpp"
#include "dacdm/tensor.hpp"

namespace dacdm::testing {

inline Vec random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

/// Widths (in, hidden..., out) with 1-3 hidden layers of width 1-6.
inline std::vector<std::size_t> random_widths(Rng& rng, std::size_t in, std::size_t out) {
  std::vector<std::size_t> w{in};
  const int hidden = rng.uniform_int(1, 3);
  for (int i = 0; i < hidden; ++i) w.push_back(static_cast<std::size_t>(rng.uniform_int(1, 6)));
  w.push_back(out);
  return w;
}

/// Random network with non-zero biases, so every coordinate is exercised.
inline Mlp random_mlp(Rng& rng, std::span<const std::size_t> widths, double gain = 1.0) {
  Mlp m = Mlp::random(widths, rng, gain);
  std::vector<DenseLayer> layers = m.layers();
  for (auto& l : layers)
    for (auto& b : l.bias) b = 0.3 * rng.normal();
  return Mlp(std::move(layers));
}

/// Isotropic blob per class in one domain.
inline DomainDataset blobs(Rng& rng, const std::vector<Vec>& means, int per_class, double sd, Domain domain) {
  DomainDataset ds{{}, static_cast<int>(means.size()), static_cast<int>(means.front().size())};
  for (int c = 0; c < static_cast<int>(means.size()); ++c)
    for (int i = 0; i < per_class; ++i) {
      Vec x = means[static_cast<std::size_t>(c)];
      for (auto& v : x) v += sd * rng.normal();
      ds.points.push_back({std::move(x), c, domain});
    }
  return ds;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dacdm::testing
