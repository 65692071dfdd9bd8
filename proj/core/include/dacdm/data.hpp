#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dacdm/tensor.hpp"

namespace dacdm {

enum class Domain { Source, Target, Generated };

/// Single-letter file tag: S, T or G.
char domain_tag(Domain d);
Domain domain_from_tag(char tag);
std::string domain_name(Domain d);

struct LabeledPoint {
  Vec x;
  int y = 0;
  Domain domain = Domain::Source;

  bool operator==(const LabeledPoint&) const = default;
};

/// A set of points sharing feature dimension and class count. For synthetic
/// target data, y carries the generator's ground truth; UDA training never reads it.
struct DomainDataset {
  std::vector<LabeledPoint> points;
  int num_classes = 0;
  int dim = 0;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  std::size_t count(Domain d) const;
  DomainDataset filter(Domain d) const;
  /// Throws ShapeError/ConfigError if any point violates dim or label range.
  void validate() const;

  bool operator==(const DomainDataset&) const = default;
};

/// Concatenation; both sets must share dim and K.
DomainDataset concat(const DomainDataset& a, const DomainDataset& b);

struct TwoMoonsShift {
  int n_source = 600;
  int n_target = 200;
  double rotation_deg = 30.0;
  Vec translation{0.5, 0.0};
  double noise_std = 0.1;
  /// Relative class frequencies; empty means balanced.
  Vec source_class_weights;
  Vec target_class_weights;
};

/// Two interleaved half-circles (class 0 upper, class 1 lower), centred at the
/// origin. The target domain is the same distribution rotated about the
/// origin and then translated. Pure function of (config, seed).
std::pair<DomainDataset, DomainDataset> gen_two_moons_shift(const TwoMoonsShift& cfg, std::uint64_t seed);

struct GaussianDomains {
  Vec mu_source;
  Vec mu_target;
  double variance = 1.0;
  /// One offset per class, added to the domain mean. Empty means K = 1, no offset.
  std::vector<Vec> class_offsets;
  int n_per_domain = 200;
  /// Relative class frequencies (shared by both domains); empty means balanced.
  Vec class_weights;

  int num_classes() const { return class_offsets.empty() ? 1 : static_cast<int>(class_offsets.size()); }
  Vec cell_mean(Domain d, int cls) const;
  std::vector<int> class_counts() const;
};

/// Each (domain, class) cell is N(mu_domain + offset_class, variance * I).
std::pair<DomainDataset, DomainDataset> gen_gaussian_domains(const GaussianDomains& cfg, std::uint64_t seed);

/// CSV with header `dim=<d>,K=<k>` and rows `x1,...,xd,y,domain`.
void write_dataset(const DomainDataset& ds, std::ostream& out);
void write_dataset(const DomainDataset& ds, const std::filesystem::path& path);
DomainDataset read_dataset(std::istream& in);
DomainDataset read_dataset(const std::filesystem::path& path);

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double v);

}  // namespace dacdm
