#include "dacdm/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dacdm/error.hpp"
#include "dacdm/rng.hpp"

namespace dacdm {

char domain_tag(Domain d) {
  switch (d) {
    case Domain::Source: return 'S';
    case Domain::Target: return 'T';
    case Domain::Generated: return 'G';
  }
  return '?';
}

Domain domain_from_tag(char tag) {
  switch (tag) {
    case 'S': return Domain::Source;
    case 'T': return Domain::Target;
    case 'G': return Domain::Generated;
    default: throw ParseError(std::string("unknown domain tag '") + tag + "'", 0);
  }
}

std::string domain_name(Domain d) {
  switch (d) {
    case Domain::Source: return "source";
    case Domain::Target: return "target";
    case Domain::Generated: return "generated";
  }
  return "unknown";
}

std::size_t DomainDataset::count(Domain d) const {
  std::size_t n = 0;
  for (const auto& p : points) n += p.domain == d ? 1 : 0;
  return n;
}

DomainDataset DomainDataset::filter(Domain d) const {
  DomainDataset out{{}, num_classes, dim};
  for (const auto& p : points)
    if (p.domain == d) out.points.push_back(p);
  return out;
}

void DomainDataset::validate() const {
  if (dim < 1) throw ConfigError("dataset dim must be >= 1");
  if (num_classes < 1) throw ConfigError("dataset K must be >= 1");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (static_cast<int>(p.x.size()) != dim) throw ShapeError("point " + std::to_string(i) + " has wrong dimension");
    if (p.y < 0 || p.y >= num_classes) throw ConfigError("point " + std::to_string(i) + " label out of range");
    if (!all_finite(p.x)) throw NumericError("point " + std::to_string(i) + " has non-finite features");
  }
}

DomainDataset concat(const DomainDataset& a, const DomainDataset& b) {
  if (a.dim != b.dim || a.num_classes != b.num_classes)
    throw ShapeError("cannot concatenate datasets with different dim or K");
  DomainDataset out = a;
  out.points.insert(out.points.end(), b.points.begin(), b.points.end());
  return out;
}

namespace {

// Deterministic per-class counts: floor of the weighted share, remainder to
// the classes with the largest fractional parts (lowest index on ties).
std::vector<int> split_counts(int n, const Vec& weights, int k) {
  Vec w = weights.empty() ? Vec(static_cast<std::size_t>(k), 1.0) : weights;
  if (static_cast<int>(w.size()) != k) throw ConfigError("class weight count differs from K");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("class weights must be finite and non-negative");
    total += v;
  }
  if (!(total > 0.0)) throw ConfigError("class weights sum to zero");
  std::vector<int> counts(static_cast<std::size_t>(k));
  std::vector<double> frac(static_cast<std::size_t>(k));
  int assigned = 0;
  for (int c = 0; c < k; ++c) {
    const double share = n * w[c] / total;
    counts[c] = static_cast<int>(std::floor(share));
    frac[c] = share - counts[c];
    assigned += counts[c];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < frac.size(); ++c)
      if (frac[c] > frac[best]) best = c;
    ++counts[best];
    frac[best] = -1.0;
    ++assigned;
  }
  return counts;
}

Vec moon_point(int cls, double noise_std, Rng& rng) {
  const double theta = std::numbers::pi * rng.uniform();
  Vec x(2);
  if (cls == 0) {
    x[0] = std::cos(theta) - 0.5;
    x[1] = std::sin(theta) - 0.25;
  } else {
    x[0] = 1.0 - std::cos(theta) - 0.5;
    x[1] = 0.5 - std::sin(theta) - 0.25;
  }
  x[0] += noise_std * rng.normal();
  x[1] += noise_std * rng.normal();
  return x;
}

DomainDataset sample_moons(int n, const Vec& weights, Domain domain, double noise_std, double angle_rad,
                           const Vec& shift, Rng& rng) {
  DomainDataset ds{{}, 2, 2};
  const auto counts = split_counts(n, weights, 2);
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  for (int cls = 0; cls < 2; ++cls) {
    for (int i = 0; i < counts[cls]; ++i) {
      Vec p = moon_point(cls, noise_std, rng);
      Vec q{c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]};
      ds.points.push_back({std::move(q), cls, domain});
    }
  }
  return ds;
}

}  // namespace

std::pair<DomainDataset, DomainDataset> gen_two_moons_shift(const TwoMoonsShift& cfg, std::uint64_t seed) {
  if (cfg.n_source < 1 || cfg.n_target < 1) throw ConfigError("two-moons domains need at least one point each");
  if (!(cfg.noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  if (cfg.translation.size() != 2) throw ConfigError("two-moons translation must be 2-dimensional");
  Rng src_rng(derive_seed(seed, "moons/source"));
  Rng tgt_rng(derive_seed(seed, "moons/target"));
  const double angle = cfg.rotation_deg * std::numbers::pi / 180.0;
  auto source = sample_moons(cfg.n_source, cfg.source_class_weights, Domain::Source, cfg.noise_std, 0.0, Vec{0.0, 0.0}, src_rng);
  auto target = sample_moons(cfg.n_target, cfg.target_class_weights, Domain::Target, cfg.noise_std, angle, cfg.translation, tgt_rng);
  return {std::move(source), std::move(target)};
}

Vec GaussianDomains::cell_mean(Domain d, int cls) const {
  Vec m = d == Domain::Source ? mu_source : mu_target;
  if (!class_offsets.empty()) axpy(1.0, class_offsets.at(static_cast<std::size_t>(cls)), m);
  return m;
}

std::vector<int> GaussianDomains::class_counts() const {
  return split_counts(n_per_domain, class_weights, num_classes());
}

std::pair<DomainDataset, DomainDataset> gen_gaussian_domains(const GaussianDomains& cfg, std::uint64_t seed) {
  const std::size_t d = cfg.mu_source.size();
  if (d == 0 || cfg.mu_target.size() != d) throw ConfigError("gaussian domain means must be non-empty and equal width");
  for (const auto& off : cfg.class_offsets)
    if (off.size() != d) throw ConfigError("class offset width differs from mean width");
  if (!(cfg.variance > 0.0)) throw ConfigError("gaussian variance must be > 0");
  const auto counts = cfg.class_counts();
  for (int c = 0; c < cfg.num_classes(); ++c)
    if (counts[c] < 1) throw ConfigError("class " + std::to_string(c) + " receives no samples");

  const double sd = std::sqrt(cfg.variance);
  auto make = [&](Domain dom, std::string_view tag) {
    Rng rng(derive_seed(seed, tag));
    DomainDataset ds{{}, cfg.num_classes(), static_cast<int>(d)};
    for (int c = 0; c < cfg.num_classes(); ++c) {
      const Vec mean = cfg.cell_mean(dom, c);
      for (int i = 0; i < counts[c]; ++i) {
        Vec x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = mean[j] + sd * rng.normal();
        ds.points.push_back({std::move(x), c, dom});
      }
    }
    return ds;
  };
  return {make(Domain::Source, "gauss/source"), make(Domain::Target, "gauss/target")};
}

// ----------------------------------------------------------------------- I/O

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_dataset(const DomainDataset& ds, std::ostream& out) {
  out << "dim=" << ds.dim << ",K=" << ds.num_classes << '\n';
  for (const auto& p : ds.points) {
    for (double v : p.x) out << format_double(v) << ',';
    out << p.y << ',' << domain_tag(p.domain) << '\n';
  }
}

void write_dataset(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_dataset(ds, out);
}

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

DomainDataset read_dataset(std::istream& in) {
  std::string line;
  int line_no = 0;
  DomainDataset ds;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!have_header) {
      const auto parts = split(line, ',');
      if (parts.size() != 2 || parts[0].substr(0, 4) != "dim=" || parts[1].substr(0, 2) != "K=" ||
          !parse_number(parts[0].substr(4), ds.dim) || !parse_number(parts[1].substr(2), ds.num_classes))
        throw ParseError("expected header 'dim=<d>,K=<k>'", line_no);
      if (ds.dim < 1 || ds.num_classes < 1) throw ParseError("header dims must be positive", line_no);
      have_header = true;
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() != static_cast<std::size_t>(ds.dim) + 2)
      throw ParseError("expected " + std::to_string(ds.dim + 2) + " fields, got " + std::to_string(fields.size()), line_no);
    LabeledPoint p;
    p.x.resize(static_cast<std::size_t>(ds.dim));
    for (int j = 0; j < ds.dim; ++j) {
      if (!parse_number(fields[j], p.x[j]) || !std::isfinite(p.x[j]))
        throw ParseError("malformed feature value '" + std::string(fields[j]) + "'", line_no);
    }
    if (!parse_number(fields[ds.dim], p.y)) throw ParseError("malformed class label", line_no);
    if (p.y < 0 || p.y >= ds.num_classes)
      throw ParseError("class label " + std::to_string(p.y) + " outside [0, " + std::to_string(ds.num_classes) + ")", line_no);
    const auto tag = fields[ds.dim + 1];
    if (tag.size() != 1 || (tag[0] != 'S' && tag[0] != 'T' && tag[0] != 'G'))
      throw ParseError("unknown domain tag '" + std::string(tag) + "'", line_no);
    p.domain = domain_from_tag(tag[0]);
    ds.points.push_back(std::move(p));
  }
  if (!have_header) throw ParseError("missing header", line_no);
  return ds;
}

DomainDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace dacdm
