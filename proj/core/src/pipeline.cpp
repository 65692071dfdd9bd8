#include "dacdm/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "dacdm/error.hpp"
#include "dacdm/rng.hpp"

namespace dacdm {

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::Baseline;
  if (name == "pseudo_label") return Variant::PseudoLabel;
  if (name == "no_domain_guidance") return Variant::NoDomainGuidance;
  if (name == "generated_only") return Variant::GeneratedOnly;
  if (name == "full") return Variant::Full;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::PseudoLabel: return "pseudo_label";
    case Variant::NoDomainGuidance: return "no_domain_guidance";
    case Variant::GeneratedOnly: return "generated_only";
    case Variant::Full: return "full";
  }
  return "full";
}

Control parse_control(const std::string& name) {
  if (name == "condition") return Control::Condition;
  if (name == "guidance") return Control::Guidance;
  throw ConfigError("unknown control mode '" + name + "'");
}

std::string control_name(Control c) { return c == Control::Condition ? "condition" : "guidance"; }

// ------------------------------------------------------------ config fields

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T out{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("bad value for '" + key + "': " + s);
  return out;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("bad boolean for '" + key + "': " + s);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto a = item.find_first_not_of(' ');
    if (a == std::string::npos) continue;
    out.push_back(item.substr(a, item.find_last_not_of(' ') - a + 1));
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& s) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(parse_number<T>(key, item));
  return out;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

double max_abs_coordinate(const DomainDataset& d) {
  double m = 0.0;
  for (const auto& p : d.points)
    for (double v : p.x) m = std::max(m, std::abs(v));
  return m;
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += format_double(v[i]);
    else out += std::to_string(v[i]);
  }
  return out;
}

std::string rule_name(GuidanceRule r) { return r == GuidanceRule::SigmaT ? "sigma_t" : "sqrt_one_minus_alpha_bar"; }

GuidanceRule parse_rule(const std::string& s) {
  if (s == "sqrt_one_minus_alpha_bar") return GuidanceRule::SqrtOneMinusAlphaBar;
  if (s == "sigma_t") return GuidanceRule::SigmaT;
  throw ConfigError("unknown guidance rule '" + s + "'");
}

std::string class_rule_name(ClassRule r) { return r == ClassRule::PerClass ? "per_class" : "uniform"; }

ClassRule parse_class_rule(const std::string& s) {
  if (s == "per_class") return ClassRule::PerClass;
  if (s == "uniform") return ClassRule::Uniform;
  throw ConfigError("unknown class sampling rule '" + s + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define DACDM_NUM(KEY, MEMBER, TYPE)                                                          \
  Field {                                                                                     \
    KEY, [](const ExperimentConfig& c) { return fmt(static_cast<TYPE>(c.MEMBER)); },          \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_number<TYPE>(KEY, v); } \
  }
#define DACDM_BOOL(KEY, MEMBER)                                                   \
  Field {                                                                         \
    KEY, [](const ExperimentConfig& c) { return fmt(static_cast<bool>(c.MEMBER)); }, \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); } \
  }
#define DACDM_LIST(KEY, MEMBER, TYPE)                                               \
  Field {                                                                           \
    KEY, [](const ExperimentConfig& c) { return fmt_list(c.MEMBER); },              \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_list<TYPE>(KEY, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DACDM_NUM("seed", seed, std::uint64_t),
      DACDM_LIST("seeds", seeds, std::uint64_t),
      DACDM_NUM("threads", threads, int),
      {"variant", [](const ExperimentConfig& c) { return variant_name(c.variant); },
       [](ExperimentConfig& c, const std::string& v) { c.variant = parse_variant(v); }},

      {"data.kind", [](const ExperimentConfig& c) { return c.data_kind; },
       [](ExperimentConfig& c, const std::string& v) {
         if (v != "two_moons" && v != "gaussian") throw ConfigError("unknown data.kind '" + v + "'");
         c.data_kind = v;
       }},
      DACDM_NUM("data.n_source", moons.n_source, int),
      DACDM_NUM("data.n_target", moons.n_target, int),
      DACDM_NUM("data.rotation_deg", moons.rotation_deg, double),
      DACDM_LIST("data.translation", moons.translation, double),
      DACDM_NUM("data.noise", moons.noise_std, double),
      DACDM_LIST("data.source_class_weights", moons.source_class_weights, double),
      DACDM_LIST("data.target_class_weights", moons.target_class_weights, double),
      DACDM_NUM("data.gauss.shift", gauss_shift, double),
      DACDM_NUM("data.gauss.class_sep", gauss_class_sep, double),
      DACDM_NUM("data.gauss.variance", gauss_variance, double),
      DACDM_NUM("data.gauss.n", gauss_n, int),

      DACDM_NUM("diffusion.T", diffusion_steps, int),
      DACDM_NUM("diffusion.beta_start", beta_start, double),
      DACDM_NUM("diffusion.beta_end", beta_end, double),
      DACDM_LIST("diffusion.hidden", diffusion.shape.hidden, std::size_t),
      DACDM_NUM("diffusion.iterations", diffusion.iterations, int),
      DACDM_NUM("diffusion.batch", diffusion.batch_size, int),
      DACDM_NUM("diffusion.step_size", diffusion.step_size, double),
      DACDM_NUM("diffusion.embed_scale", diffusion.embed_scale, double),
      DACDM_NUM("diffusion.time_width", diffusion.shape.time_embed.width, int),
      DACDM_NUM("diffusion.time_max_freq", diffusion.shape.time_embed.max_freq, double),

      DACDM_LIST("classifier.hidden", classifier.hidden, std::size_t),
      DACDM_NUM("classifier.iterations", classifier.iterations, int),
      DACDM_NUM("classifier.batch", classifier.batch_size, int),
      DACDM_NUM("classifier.step_size", classifier.step_size, double),

      DACDM_NUM("guidance.scale", guidance.scale, double),
      {"guidance.rule", [](const ExperimentConfig& c) { return rule_name(c.guidance.rule); },
       [](ExperimentConfig& c, const std::string& v) { c.guidance.rule = parse_rule(v); }},
      DACDM_NUM("guidance.class_scale", class_guidance_scale, double),
      {"control.class", [](const ExperimentConfig& c) { return control_name(c.class_control); },
       [](ExperimentConfig& c, const std::string& v) { c.class_control = parse_control(v); }},
      {"control.domain", [](const ExperimentConfig& c) { return control_name(c.domain_control); },
       [](ExperimentConfig& c, const std::string& v) { c.domain_control = parse_control(v); }},

      DACDM_NUM("solver.M", solver_steps, int),
      {"solver.formula", [](const ExperimentConfig& c) { return solver_formula_name(c.solver_formula); },
       [](ExperimentConfig& c, const std::string& v) { c.solver_formula = parse_solver_formula(v); }},
      {"solver.x0_clip", [](const ExperimentConfig& c) { return c.x0_clip ? fmt(*c.x0_clip) : std::string("auto"); },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "auto") {
           c.x0_clip.reset();
         } else {
           c.x0_clip = parse_number<double>("solver.x0_clip", v);
         }
       }},
      DACDM_NUM("generate.per_class", per_class, int),
      {"generate.class_rule", [](const ExperimentConfig& c) { return class_rule_name(c.class_rule); },
       [](ExperimentConfig& c, const std::string& v) { c.class_rule = parse_class_rule(v); }},

      {"uda.regularizer", [](const ExperimentConfig& c) { return regularizer_name(c.uda.regularizer); },
       [](ExperimentConfig& c, const std::string& v) { c.uda.regularizer = parse_regularizer(v); }},
      DACDM_NUM("uda.tradeoff", uda.tradeoff, double),
      DACDM_NUM("uda.iterations", uda.iterations, int),
      DACDM_NUM("uda.batch", uda.batch_size, int),
      DACDM_NUM("uda.step_size", uda.step_size, double),
      DACDM_LIST("uda.feature_hidden", uda.feature_hidden, std::size_t),
      DACDM_NUM("uda.feature_dim", uda.feature_dim, std::size_t),
      DACDM_LIST("uda.domain_hidden", uda.domain_hidden, std::size_t),
      DACDM_NUM("uda.confusion_temperature", uda.confusion_temperature, double),
      DACDM_BOOL("uda.anneal", uda.anneal),
      DACDM_BOOL("uda.ramp", uda.ramp),
      {"fhat.regularizer",
       [](const ExperimentConfig& c) {
         return c.fhat_regularizer ? regularizer_name(*c.fhat_regularizer) : std::string("same");
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "same") c.fhat_regularizer.reset();
         else c.fhat_regularizer = parse_regularizer(v);
       }},
      {"fhat.tradeoff",
       [](const ExperimentConfig& c) { return c.fhat_tradeoff ? fmt(*c.fhat_tradeoff) : std::string("same"); },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "same") c.fhat_tradeoff.reset();
         else c.fhat_tradeoff = parse_number<double>("fhat.tradeoff", v);
       }},

      DACDM_BOOL("metrics.a_distance", compute_a_distance),
      {"metrics.probe", [](const ExperimentConfig& c) { return probe_name(c.a_distance.probe); },
       [](ExperimentConfig& c, const std::string& v) { c.a_distance.probe = parse_probe(v); }},
      DACDM_NUM("metrics.probe_iterations", a_distance.iterations, int),
      DACDM_BOOL("metrics.bound", compute_bound),
      DACDM_NUM("metrics.grid_angles", grid_angles, int),
      DACDM_NUM("metrics.grid_biases", grid_biases, int),
      DACDM_NUM("metrics.delta", delta, double),
  };
  return table;
}

#undef DACDM_NUM
#undef DACDM_BOOL
#undef DACDM_LIST

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

KeyValues ExperimentConfig::to_key_values() const {
  KeyValues kv;
  for (const auto& f : fields()) kv.set(f.key, f.get(*this));
  return kv;
}

void ExperimentConfig::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv.entries()) set(k, v);
}

void ExperimentConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

std::string ExperimentConfig::get(const std::string& key) const { return field(key).get(*this); }

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void ExperimentConfig::validate() const {
  if (diffusion_steps < 1) throw ConfigError("diffusion.T must be >= 1");
  if (solver_steps < 1 || solver_steps >= diffusion_steps) throw ConfigError("solver.M must lie in [1, diffusion.T - 1]");
  if (per_class < 0) throw ConfigError("generate.per_class must be >= 0");
  if (!std::isfinite(guidance.scale) || guidance.scale < 0.0) throw ConfigError("guidance.scale must be finite and >= 0");
  if (!std::isfinite(class_guidance_scale) || class_guidance_scale < 0.0)
    throw ConfigError("guidance.class_scale must be finite and >= 0");
  if (x0_clip && !(*x0_clip >= 0.0)) throw ConfigError("solver.x0_clip must be >= 0 or auto");
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("metrics.delta must lie in (0, 1)");
  if (data_kind == "two_moons" && moons.translation.size() != 2) throw ConfigError("data.translation needs two values");
  if (!std::isfinite(uda.tradeoff) || uda.tradeoff < 0.0) throw ConfigError("uda.tradeoff must be finite and >= 0");
  (void)schedule();
}

std::string ExperimentConfig::hash() const {
  KeyValues kv = to_key_values();
  std::string text;
  for (const auto& [k, v] : kv.entries())
    if (k != "threads") text += k + "=" + v + "\n";
  return hex64(fnv1a64(text));
}

UdaConfig ExperimentConfig::fhat_uda() const {
  UdaConfig u = uda;
  if (fhat_regularizer) u.regularizer = *fhat_regularizer;
  if (fhat_tradeoff) u.tradeoff = *fhat_tradeoff;
  return u;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig cfg;
  cfg.apply(KeyValues::load(path));
  return cfg;
}

std::pair<DomainDataset, DomainDataset> make_domains(const ExperimentConfig& cfg) {
  const std::uint64_t seed = derive_seed(cfg.seed, "stage/data");
  if (cfg.data_kind == "gaussian") {
    GaussianDomains g;
    g.mu_source = {0.0, 0.0};
    g.mu_target = {cfg.gauss_shift, 0.0};
    g.variance = cfg.gauss_variance;
    g.class_offsets = {{0.0, -0.5 * cfg.gauss_class_sep}, {0.0, 0.5 * cfg.gauss_class_sep}};
    g.n_per_domain = cfg.gauss_n;
    return gen_gaussian_domains(g, seed);
  }
  return gen_two_moons_shift(cfg.moons, seed);
}

// --------------------------------------------------------------- StageCache

StageCache::StageCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::filesystem::path StageCache::path_for(const std::string& key, const char* ext) const {
  return dir_ / (key + ext);
}

namespace {

template <class T, class Load, class Save>
std::shared_ptr<const T> cached(std::map<std::string, std::shared_ptr<const T>>& memo, std::mutex& mutex,
                                std::size_t& hits, std::size_t& misses, std::size_t& loads, const std::string& key,
                                const std::filesystem::path& file, const std::function<T()>& make, Load load,
                                Save save) {
  {
    std::lock_guard lock(mutex);
    auto it = memo.find(key);
    if (it != memo.end()) {
      ++hits;
      return it->second;
    }
  }
  std::shared_ptr<const T> value;
  bool loaded = false;
  if (!file.empty() && std::filesystem::exists(file)) {
    value = std::make_shared<const T>(load(file));
    loaded = true;
  } else {
    value = std::make_shared<const T>(make());
    if (!file.empty()) {
      const auto tmp = std::filesystem::path(file).concat(".tmp");
      save(*value, tmp);
      std::filesystem::rename(tmp, file);
    }
  }
  std::lock_guard lock(mutex);
  ++misses;
  if (loaded) ++loads;
  return memo.emplace(key, value).first->second;
}

}  // namespace

std::shared_ptr<const TaskModel> StageCache::task(const std::string& key, const std::function<TaskModel()>& make) {
  return cached<TaskModel>(
      tasks_, mutex_, hits_, misses_, loads_, key, dir_.empty() ? std::filesystem::path{} : path_for(key, ".ckpt"), make,
      [](const std::filesystem::path& p) { return TaskModel::from_checkpoint(Checkpoint::load(p)); },
      [](const TaskModel& m, const std::filesystem::path& p) { m.to_checkpoint().save(p); });
}

std::shared_ptr<const ConditionedDenoiser> StageCache::denoiser(const std::string& key,
                                                                const std::function<ConditionedDenoiser()>& make) {
  return cached<ConditionedDenoiser>(
      denoisers_, mutex_, hits_, misses_, loads_, key, dir_.empty() ? std::filesystem::path{} : path_for(key, ".ckpt"), make,
      [](const std::filesystem::path& p) { return ConditionedDenoiser::from_checkpoint(Checkpoint::load(p)); },
      [](const ConditionedDenoiser& m, const std::filesystem::path& p) { m.to_checkpoint().save(p); });
}

std::shared_ptr<const MlpNoisyClassifier> StageCache::classifier(const std::string& key,
                                                                 const std::function<MlpNoisyClassifier()>& make) {
  return cached<MlpNoisyClassifier>(
      classifiers_, mutex_, hits_, misses_, loads_, key, dir_.empty() ? std::filesystem::path{} : path_for(key, ".ckpt"),
      make, [](const std::filesystem::path& p) { return MlpNoisyClassifier::from_checkpoint(Checkpoint::load(p)); },
      [](const MlpNoisyClassifier& m, const std::filesystem::path& p) { m.to_checkpoint().save(p); });
}

std::shared_ptr<const DomainDataset> StageCache::dataset(const std::string& key,
                                                         const std::function<DomainDataset()>& make) {
  return cached<DomainDataset>(
      datasets_, mutex_, hits_, misses_, loads_, key, dir_.empty() ? std::filesystem::path{} : path_for(key, ".csv"), make,
      [](const std::filesystem::path& p) { return read_dataset(p); },
      [](const DomainDataset& d, const std::filesystem::path& p) { write_dataset(d, p); });
}

// ----------------------------------------------------------------- manifest

KeyValues RunManifest::to_key_values() const {
  KeyValues kv;
  kv.set("config_hash", config_hash);
  kv.set("seed", seed);
  kv.set("variant", variant_name(variant));
  kv.set("status", std::string(ok ? "ok" : "failed"));
  if (!ok) {
    kv.set("failed_stage", failed_stage);
    kv.set("error", error);
  }
  kv.merge(metrics, "metric.");
  for (const auto& [name, d] : a_distances) kv.set("a_distance." + name, d);
  if (bound) kv.merge(bound->to_key_values(), "bound.");
  kv.merge(timings, "seconds.");
  kv.merge(files, "file.");
  return kv;
}

void write_metrics_csv(const RunManifest& m, std::ostream& out) {
  out << "key,value\n";
  for (const auto& [k, v] : m.metrics.entries()) out << k << ',' << v << '\n';
  for (const auto& [name, d] : m.a_distances) out << "a_distance." << name << ',' << format_double(d) << '\n';
  if (m.bound) {
    const KeyValues bound = m.bound->to_key_values();
    for (const auto& [k, v] : bound.entries()) out << "bound." << k << ',' << v << '\n';
  }
}

// ----------------------------------------------------------------- pipeline

namespace {

/// Hash of the config entries matching `prefixes` (a trailing '.' matches a
/// whole section), the stage tag, upstream keys and the seed.
std::string stage_key(const ExperimentConfig& cfg, const std::string& tag, std::initializer_list<const char*> prefixes,
                      std::initializer_list<std::string> upstream = {}) {
  std::string text = tag + "\nseed=" + std::to_string(cfg.seed) + "\n";
  const KeyValues kv = cfg.to_key_values();
  for (const auto& [k, v] : kv.entries()) {
    for (const char* p : prefixes) {
      const std::string pre(p);
      if (k == pre || (pre.back() == '.' && k.starts_with(pre))) {
        text += k + "=" + v + "\n";
        break;
      }
    }
  }
  for (const auto& u : upstream) text += "<" + u + "\n";
  return tag + "-" + hex64(fnv1a64(text));
}

class StageTimer {
 public:
  StageTimer(RunManifest& m, std::string& stage, const std::string& name) : m_(m), name_(name) {
    stage = name;
    start_ = std::chrono::steady_clock::now();
  }
  ~StageTimer() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
    m_.timings.set(name_, dt.count());
  }

 private:
  RunManifest& m_;
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

/// Drops the class from the condition; the class then comes from guidance alone.
class ClassBlind : public NoisePredictor {
 public:
  explicit ClassBlind(const NoisePredictor& base) : base_(base) {}
  Vec predict_noise(std::span<const double> x_t, int t, const Condition& c) const override {
    return base_.predict_noise(x_t, t, Condition{0, c.domain});
  }
  int dim() const override { return base_.dim(); }

 private:
  const NoisePredictor& base_;
};

UdaConfig seeded(UdaConfig u, std::uint64_t seed) {
  u.seed = derive_seed(seed, "stage/uda");
  return u;
}

}  // namespace

RunManifest run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) {
  RunManifest m;
  m.seed = cfg.seed;
  m.variant = cfg.variant;
  std::string stage = "config";
  StageCache local;
  StageCache& cache = opts.cache ? *opts.cache : local;

  DomainDataset generated;
  try {
    cfg.validate();
    m.config_hash = cfg.hash();

    DomainDataset source, target;
    {
      StageTimer timer(m, stage, "data");
      std::tie(source, target) = make_domains(cfg);
    }
    const int k = source.num_classes;
    const NoiseSchedule sched = cfg.schedule();

    const std::string fstar_key = stage_key(cfg, "fstar", {"data.", "uda."});
    std::shared_ptr<const TaskModel> fstar;
    {
      StageTimer timer(m, stage, "fstar");
      fstar = cache.task(fstar_key, [&] { return train_uda(source, target, seeded(cfg.uda, cfg.seed)).model; });
    }
    const EvalResult pl_eval = evaluate(*fstar, target);
    m.metrics.set("pseudo_label_accuracy", pl_eval.accuracy);
    const DomainDataset pseudo = pseudo_label(*fstar, target);

    const bool generates = cfg.per_class > 0 && (cfg.variant == Variant::Full || cfg.variant == Variant::GeneratedOnly ||
                                                 cfg.variant == Variant::NoDomainGuidance);
    std::shared_ptr<const TaskModel> fhat;
    DomainDataset labeled = source;
    double eta = 1.0;

    if (generates) {
      const bool target_only = cfg.variant == Variant::NoDomainGuidance;
      const Control cls_ctl = target_only ? Control::Condition : cfg.class_control;
      const Control dom_ctl = target_only ? Control::Guidance : cfg.domain_control;
      const double domain_scale = target_only ? 0.0 : cfg.guidance.scale;
      const std::string mode = target_only ? "target_only" : control_name(cls_ctl) + "_" + control_name(dom_ctl);

      DiffusionTrainConfig dcfg = cfg.diffusion;
      dcfg.seed = derive_seed(cfg.seed, "stage/diffusion");
      dcfg.shape.dim = source.dim;
      dcfg.shape.num_classes = k;
      int domain_channel = -1;
      if (cls_ctl == Control::Condition && dom_ctl == Control::Guidance) {
        dcfg.shape.conditioning = Conditioning::Class;
      } else if (cls_ctl == Control::Condition) {
        dcfg.shape.conditioning = Conditioning::ClassAndDomain;
        domain_channel = 1;
      } else if (dom_ctl == Control::Condition) {
        dcfg.shape.conditioning = Conditioning::Domain;
        domain_channel = 1;
      } else {
        dcfg.shape.conditioning = Conditioning::Class;
        dcfg.shape.num_classes = 1;
      }

      const std::string den_key =
          stage_key(cfg, "denoiser-" + mode, {"data.", "diffusion."}, {fstar_key});
      std::shared_ptr<const ConditionedDenoiser> den;
      {
        StageTimer timer(m, stage, "diffusion");
        den = cache.denoiser(den_key, [&] {
          if (target_only) return train_target_only(pseudo, sched, dcfg).model;
          auto pool = build_pool(source, pseudo, nullptr, dcfg.shape.conditioning, {});
          if (cls_ctl == Control::Guidance && dom_ctl == Control::Guidance)
            for (auto& ex : pool) ex.condition = Condition{0, -1};
          return train_denoiser(pool, sched, dcfg).model;
        });
      }

      ClassifierTrainConfig ccfg = cfg.classifier;
      std::vector<GuidanceTerm> terms;
      std::shared_ptr<const MlpNoisyClassifier> domain_clf, class_clf;
      std::string clf_keys;
      if (dom_ctl == Control::Guidance && domain_scale != 0.0) {
        StageTimer timer(m, stage, "domain_classifier");
        ccfg.seed = derive_seed(cfg.seed, "stage/domain_classifier");
        const std::string key =
            stage_key(cfg, "domain_clf", {"data.", "diffusion.T", "diffusion.beta_start", "diffusion.beta_end",
                                          "diffusion.time_width", "diffusion.time_max_freq", "classifier."});
        clf_keys += key;
        domain_clf = cache.classifier(key, [&] { return train_domain_classifier(source, target, sched, ccfg).classifier; });
        terms.push_back({domain_clf.get(), cfg.guidance.target_label, domain_scale});
      }
      if (cls_ctl == Control::Guidance && cfg.class_guidance_scale != 0.0) {
        StageTimer timer(m, stage, "class_classifier");
        ccfg.seed = derive_seed(cfg.seed, "stage/class_classifier");
        const std::string key =
            stage_key(cfg, "class_clf", {"data.", "diffusion.T", "diffusion.beta_start", "diffusion.beta_end",
                                         "diffusion.time_width", "diffusion.time_max_freq", "classifier."},
                      {fstar_key});
        clf_keys += key;
        class_clf = cache.classifier(key, [&] {
          const DomainDataset pool = concat(source, pseudo);
          return train_noisy_classifier(pool.points, k, sched, ccfg).classifier;
        });
        terms.push_back({class_clf.get(), -1, cfg.class_guidance_scale});
      }

      const std::string gen_key = stage_key(cfg, "generated", {"guidance.", "solver.", "generate."},
                                            {den_key, clf_keys, target_only ? "target_only" : ""});
      {
        StageTimer timer(m, stage, "generate");
        const ClassBlind blind(*den);
        const NoisePredictor& base = cls_ctl == Control::Guidance ? static_cast<const NoisePredictor&>(blind) : *den;
        const GuidedPredictor guided(base, sched, terms, cfg.guidance.rule);
        const SolverPlan plan = make_plan(sched, cfg.solver_steps);
        GenerateConfig gcfg;
        gcfg.total = cfg.per_class * k;
        gcfg.class_rule = cfg.class_rule;
        gcfg.formula = cfg.solver_formula;
        gcfg.x0_clip = cfg.x0_clip ? *cfg.x0_clip : 1.5 * std::max(max_abs_coordinate(source), max_abs_coordinate(target));
        gcfg.domain_channel = domain_channel;
        gcfg.seed = derive_seed(cfg.seed, "stage/generate");
        gcfg.threads = cfg.threads;
        generated = *cache.dataset(gen_key, [&] { return generate_dataset(guided, k, sched, plan, gcfg); });
      }
      m.metrics.set("n_generated", static_cast<std::uint64_t>(generated.size()));
      if (cfg.variant == Variant::GeneratedOnly) {
        labeled = generated;
        eta = 0.0;
      } else {
        AugmentedSource aug = augment_source(source, generated);
        labeled = std::move(aug.data);
        eta = aug.eta;
      }
      {
        StageTimer timer(m, stage, "fhat");
        const std::string key = stage_key(cfg, "fhat-" + variant_name(cfg.variant), {"uda.", "fhat."}, {gen_key});
        fhat = cache.task(key, [&] { return train_uda(labeled, target, seeded(cfg.fhat_uda(), cfg.seed)).model; });
      }
    } else if (cfg.variant == Variant::PseudoLabel) {
      AugmentedSource aug = augment_source(source, pseudo);
      labeled = std::move(aug.data);
      eta = aug.eta;
      generated = pseudo;
      m.metrics.set("n_generated", static_cast<std::uint64_t>(0));
      StageTimer timer(m, stage, "fhat");
      const std::string key = stage_key(cfg, "fhat-pseudo_label", {"uda.", "fhat."}, {fstar_key});
      fhat = cache.task(key, [&] { return train_uda(labeled, target, seeded(cfg.fhat_uda(), cfg.seed)).model; });
    } else {
      // No generated data: f_hat is f* itself.
      m.metrics.set("n_generated", static_cast<std::uint64_t>(0));
      fhat = fstar;
    }
    m.metrics.set("eta", eta);

    {
      StageTimer timer(m, stage, "evaluate");
      const EvalResult r = evaluate(*fhat, target);
      m.metrics.set("target_accuracy", r.accuracy);
      for (std::size_t c = 0; c < r.per_class.size(); ++c)
        m.metrics.set("target_accuracy.class" + std::to_string(c), r.per_class[c]);
      m.metrics.set("source_accuracy", evaluate(*fhat, source).accuracy);
      if (!opts.out_dir.empty()) {
        const auto dir = opts.out_dir / ("run-" + variant_name(cfg.variant) + "-seed" + std::to_string(cfg.seed) + "-" +
                                         m.config_hash.substr(0, 8));
        std::filesystem::create_directories(dir);
        std::ofstream out(dir / "eval.csv");
        write_eval_csv(r, out);
        m.files.set("eval", (dir / "eval.csv").string());
      }
    }

    if (cfg.compute_a_distance) {
      StageTimer timer(m, stage, "a_distance");
      ADistanceConfig acfg = cfg.a_distance;
      acfg.seed = derive_seed(cfg.seed, "stage/a_distance");
      m.a_distances.emplace_back("s_t", a_distance(source, target, acfg));
      if (!generated.empty() && generates) {
        m.a_distances.emplace_back("g_t", a_distance(generated, target, acfg));
        m.a_distances.emplace_back("shat_t", a_distance(concat(source, generated), target, acfg));
      }
    }

    if (cfg.compute_bound) {
      StageTimer timer(m, stage, "bound");
      UdaConfig src_only = seeded(cfg.uda, cfg.seed);
      src_only.regularizer = Regularizer::None;
      const std::string key = stage_key(cfg, "fstar_source", {"data.", "uda."});
      const auto f_src = cache.task(key, [&] { return train_uda(source, target, src_only).model; });
      const DomainDataset bound_gen = generates ? generated : DomainDataset{{}, k, source.dim};
      const DomainDataset* sets[] = {&source, &bound_gen, &target};
      const HypothesisGrid grid = make_grid(sets, cfg.grid_angles, cfg.grid_biases);
      m.bound = bound_report(*f_src, *fhat, source, bound_gen, target, grid, cfg.delta);
    }

    m.ok = true;
    stage.clear();
  } catch (const std::exception& e) {
    m.ok = false;
    m.failed_stage = stage;
    m.error = e.what();
  }

  if (!opts.out_dir.empty()) {
    const auto dir = opts.out_dir / ("run-" + variant_name(cfg.variant) + "-seed" + std::to_string(cfg.seed) + "-" +
                                     (m.config_hash.empty() ? std::string("invalid") : m.config_hash.substr(0, 8)));
    std::filesystem::create_directories(dir);
    {
      std::ofstream out(dir / "metrics.csv");
      write_metrics_csv(m, out);
      m.files.set("metrics", (dir / "metrics.csv").string());
    }
    if (!m.a_distances.empty()) {
      std::ofstream out(dir / "a_distance.csv");
      out << "pair,a_distance\n";
      for (const auto& [name, d] : m.a_distances) out << name << ',' << format_double(d) << '\n';
      m.files.set("a_distance", (dir / "a_distance.csv").string());
    }
    if (opts.write_generated && !generated.empty()) {
      write_dataset(generated, dir / "generated.csv");
      m.files.set("generated", (dir / "generated.csv").string());
    }
    cfg.to_key_values().save(dir / "config.txt");
    m.files.set("manifest", (dir / "manifest.txt").string());
    m.to_key_values().save(dir / "manifest.txt");
  }
  return m;
}

// -------------------------------------------------------------------- sweep

bool is_sweep_key(const std::string& key) {
  return key == "generate.per_class" || key == "guidance.scale" || key == "solver.M";
}

void SweepResult::write_runs_csv(std::ostream& out) const {
  out << "key,value,seed,target_accuracy\n";
  for (const auto& r : rows) {
    const auto acc = r.manifest.metrics.find("target_accuracy");
    out << key << ',' << r.value << ',' << r.seed << ',' << (acc ? *acc : std::string("nan")) << '\n';
  }
}

double SweepResult::mean_accuracy(const std::string& value) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.value != value) continue;
    const auto acc = r.manifest.metrics.find("target_accuracy");
    sum += acc ? r.manifest.metric("target_accuracy") : std::nan("");
    ++n;
  }
  return n ? sum / n : std::nan("");
}

void SweepResult::write_summary_csv(std::ostream& out) const {
  out << "key,value,mean,std,n\n";
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.value) == order.end()) order.push_back(r.value);
  for (const auto& v : order) {
    std::vector<double> acc;
    for (const auto& r : rows) {
      if (r.value != v) continue;
      const auto a = r.manifest.metrics.find("target_accuracy");
      acc.push_back(a ? r.manifest.metric("target_accuracy") : std::nan(""));
    }
    double mean = 0.0;
    for (double a : acc) mean += a / acc.size();
    double var = 0.0;
    for (double a : acc) var += (a - mean) * (a - mean);
    const double sd = acc.size() > 1 ? std::sqrt(var / (acc.size() - 1)) : 0.0;
    out << key << ',' << v << ',' << format_double(mean) << ',' << format_double(sd) << ',' << acc.size() << '\n';
  }
}

SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& key, const std::vector<std::string>& values,
                      const RunOptions& opts) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (!is_sweep_key(key)) throw ConfigError("cannot sweep over '" + key + "'");
  cfg.validate();

  StageCache local;
  RunOptions inner = opts;
  if (!inner.cache) inner.cache = &local;

  SweepResult result;
  result.key = key;
  for (const auto& v : values) {
    for (const auto s : cfg.seeds) {
      ExperimentConfig probe = cfg;
      probe.set(key, v);
      result.rows.push_back({v, s, {}});
    }
  }

  const int workers = std::min<int>(cfg.threads, static_cast<int>(result.rows.size()));
  auto work = [&](std::size_t i) {
    ExperimentConfig run = cfg;
    run.set(key, result.rows[i].value);
    run.seed = result.rows[i].seed;
    if (workers > 1) run.threads = 1;
    result.rows[i].manifest = run_pipeline(run, inner);
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < result.rows.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < result.rows.size(); i += static_cast<std::size_t>(workers))
          work(i);
      });
    for (auto& t : pool) t.join();
  }
  return result;
}

}  // namespace dacdm
