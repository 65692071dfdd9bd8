#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dacdm/checkpoint.hpp"
#include "dacdm/data.hpp"
#include "dacdm/uda.hpp"

namespace dacdm {

enum class ProbeKind { Linear, Mlp };

ProbeKind parse_probe(const std::string& name);
std::string probe_name(ProbeKind p);

struct ADistanceConfig {
  ProbeKind probe = ProbeKind::Linear;
  std::size_t probe_hidden = 16;
  double train_fraction = 0.5;
  int iterations = 400;
  double step_size = 0.5;
  /// Subsample the larger domain so both contribute equally.
  bool balance = true;
  std::uint64_t seed = 1;
};

struct ADistanceResult {
  double distance = 0.0;  // 2 (1 - 2 err), clamped to [0, 2]
  double test_error = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

/// Proxy A-distance from the held-out error of a binary domain probe.
ADistanceResult a_distance_detail(const DomainDataset& a, const DomainDataset& b, const ADistanceConfig& cfg);
double a_distance(const DomainDataset& a, const DomainDataset& b, const ADistanceConfig& cfg = {});

/// Finite set of linear threshold classifiers h(x) = [w . x + c > 0].
struct HypothesisGrid {
  std::vector<Vec> weights;
  Vec biases;
  int dim = 0;

  std::size_t size() const { return weights.size(); }
  /// VC dimension of linear thresholds in dim dimensions.
  int vc_dimension() const { return dim + 1; }
  bool predict(std::size_t h, std::span<const double> x) const;
};

/// Directions (evenly spaced angles when dim == 2, the non-zero {-1, 0, 1}^dim
/// patterns otherwise) crossed with `num_biases` offsets spanning the data's radius.
HypothesisGrid make_grid(int dim, double radius, int num_angles, int num_biases);
/// Grid sized to cover the union of the given datasets.
HypothesisGrid make_grid(std::span<const DomainDataset* const> data, int num_angles = 24, int num_biases = 24);

/// 2 max_{h, h'} |dis_A(h, h') - dis_B(h, h')| over all ordered grid pairs.
/// Throws ConfigError when size^2 exceeds max_pairs.
double hdh_distance(const DomainDataset& a, const DomainDataset& b, const HypothesisGrid& grid,
                    std::size_t max_pairs = 4'000'000);

struct BoundReport {
  double eta = 1.0;
  double emp_risk_source = 0.0;
  double emp_risk_generated = 0.0;
  double dist_s_t = 0.0;
  double dist_g_t = 0.0;
  double complexity = 0.0;  // C
  double eps_term = 0.0;
  double rhs = 0.0;
  double lhs = 0.0;
  int vc_dim = 0;
  double delta = 0.05;
  std::size_t n_aug = 0;
  std::size_t grid_size = 0;

  bool holds() const { return lhs <= rhs; }
  KeyValues to_key_values() const;
};

/// 4 sqrt((2 V ln(2 N) + ln(2 / delta)) / N)
double complexity_term(int vc_dim, std::size_t n, double delta);
/// sqrt(ln(2 V / delta) / (2 N))
double confidence_term(int vc_dim, std::size_t n, double delta);

/// eta (E_s + d_st / 2 + C) + eps + (1 - eta) (E_g + d_gt / 2 + C), with empirical
/// risks of the source-only model and the measured target error of f_hat as lhs.
BoundReport bound_report(const TaskModel& f_star_source, const TaskModel& f_hat, const DomainDataset& source,
                         const DomainDataset& generated, const DomainDataset& target, const HypothesisGrid& grid,
                         double delta = 0.05);

}  // namespace dacdm
