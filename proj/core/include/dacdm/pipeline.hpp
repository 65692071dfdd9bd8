#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dacdm/checkpoint.hpp"
#include "dacdm/data.hpp"
#include "dacdm/diffusion.hpp"
#include "dacdm/guidance.hpp"
#include "dacdm/metrics.hpp"
#include "dacdm/sampler.hpp"
#include "dacdm/uda.hpp"

namespace dacdm {

enum class Variant {
  Baseline,          // f_hat = f*, no generation
  PseudoLabel,       // pseudo-labelled target stands in for generated samples
  NoDomainGuidance,  // diffusion trained on pseudo-labelled target only, unguided
  GeneratedOnly,     // f_hat transfers from D_g instead of D_s_hat
  Full,
};

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

/// How class or domain is steered during generation.
enum class Control { Condition, Guidance };

Control parse_control(const std::string& name);
std::string control_name(Control c);

/// Every knob of one pipeline run. Serialises to flat `key=value` text; the
/// key list is the one returned by ExperimentConfig::keys().
struct ExperimentConfig {
  std::string data_kind = "two_moons";  // two_moons | gaussian
  /// Pure rotation about the origin; the data module's default also translates.
  TwoMoonsShift moons = [] {
    TwoMoonsShift m;
    m.translation = {0.0, 0.0};
    return m;
  }();
  double gauss_shift = 3.0;
  double gauss_class_sep = 3.0;
  double gauss_variance = 0.5;
  int gauss_n = 200;

  int diffusion_steps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.1;
  DiffusionTrainConfig diffusion;
  ClassifierTrainConfig classifier;

  GuidanceConfig guidance;
  double class_guidance_scale = 1.0;
  Control class_control = Control::Condition;
  Control domain_control = Control::Guidance;

  int solver_steps = 20;
  SolverFormula solver_formula = SolverFormula::Validated;
  /// Clamp on the solver's data predictions; unset ("auto") means 1.5 times the
  /// largest absolute coordinate in the source and target data, 0 disables.
  std::optional<double> x0_clip;
  int per_class = 200;  // N_g per class
  ClassRule class_rule = ClassRule::PerClass;

  UdaConfig uda;
  /// Overrides for f_hat; unset means "same as f*".
  std::optional<Regularizer> fhat_regularizer;
  std::optional<double> fhat_tradeoff;

  Variant variant = Variant::Full;

  bool compute_a_distance = true;
  ADistanceConfig a_distance{ProbeKind::Mlp};
  bool compute_bound = true;
  int grid_angles = 24;
  int grid_biases = 24;
  double delta = 0.05;

  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int threads = 1;

  KeyValues to_key_values() const;
  /// Applies every entry; unknown keys and malformed values throw ConfigError.
  void apply(const KeyValues& kv);
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  /// FNV-1a of the canonical key-value text, as 16 hex digits.
  std::string hash() const;

  NoiseSchedule schedule() const { return NoiseSchedule(diffusion_steps, beta_start, beta_end); }
  UdaConfig fhat_uda() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// Source and target sets for (config, seed).
std::pair<DomainDataset, DomainDataset> make_domains(const ExperimentConfig& cfg);

/// Memo of trained stages keyed by the hash of every input that feeds them.
/// With a directory, artifacts are also written as checkpoints and reloaded on
/// later runs, so a pipeline can restart from any completed stage.
class StageCache {
 public:
  explicit StageCache(std::filesystem::path dir = {});

  std::shared_ptr<const TaskModel> task(const std::string& key, const std::function<TaskModel()>& make);
  std::shared_ptr<const ConditionedDenoiser> denoiser(const std::string& key,
                                                      const std::function<ConditionedDenoiser()>& make);
  std::shared_ptr<const MlpNoisyClassifier> classifier(const std::string& key,
                                                       const std::function<MlpNoisyClassifier()>& make);
  std::shared_ptr<const DomainDataset> dataset(const std::string& key, const std::function<DomainDataset()>& make);

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  /// Misses served from a checkpoint on disk rather than recomputed.
  std::size_t loads() const { return loads_; }

 private:
  std::filesystem::path path_for(const std::string& key, const char* ext) const;

  std::filesystem::path dir_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const TaskModel>> tasks_;
  std::map<std::string, std::shared_ptr<const ConditionedDenoiser>> denoisers_;
  std::map<std::string, std::shared_ptr<const MlpNoisyClassifier>> classifiers_;
  std::map<std::string, std::shared_ptr<const DomainDataset>> datasets_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
  std::size_t loads_ = 0;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  Variant variant = Variant::Full;
  bool ok = false;
  std::string failed_stage;
  std::string error;

  /// Deterministic metric values, in insertion order.
  KeyValues metrics;
  /// Per-stage wall-clock seconds (not deterministic; kept out of metrics).
  KeyValues timings;
  KeyValues files;
  std::optional<BoundReport> bound;
  /// (pair name, A-distance), e.g. ("s_t", 1.3).
  std::vector<std::pair<std::string, double>> a_distances;

  double metric(const std::string& key) const { return metrics.get_double(key); }
  KeyValues to_key_values() const;
};

struct RunOptions {
  /// Where per-run files go; empty means nothing is written.
  std::filesystem::path out_dir;
  StageCache* cache = nullptr;
  bool write_generated = true;
};

/// The whole chain for cfg.seed: f*, pseudo-labels, denoiser, classifier(s),
/// generation, D_s_hat, f_hat, evaluation, metrics. Stage failures are caught
/// and recorded in the manifest rather than thrown.
RunManifest run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// CSV `key,value` of a manifest's deterministic metrics.
void write_metrics_csv(const RunManifest& m, std::ostream& out);

struct SweepRow {
  std::string value;
  std::uint64_t seed = 0;
  RunManifest manifest;
};

struct SweepResult {
  std::string key;
  std::vector<SweepRow> rows;

  /// `key,value,seed,target_accuracy` per run.
  void write_runs_csv(std::ostream& out) const;
  /// `key,value,mean,std,n` over seeds for target accuracy.
  void write_summary_csv(std::ostream& out) const;
  /// Mean target accuracy for one swept value.
  double mean_accuracy(const std::string& value) const;
};

/// Keys accepted by run_sweep.
bool is_sweep_key(const std::string& key);

/// One run per (value, seed in cfg.seeds), sharing trained stages through the cache.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& key, const std::vector<std::string>& values,
                      const RunOptions& opts = {});

}  // namespace dacdm
