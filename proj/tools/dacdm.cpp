// Command-line front end for the DACDM pipeline and its individual stages.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dacdm/checkpoint.hpp"
#include "dacdm/data.hpp"
#include "dacdm/diffusion.hpp"
#include "dacdm/error.hpp"
#include "dacdm/guidance.hpp"
#include "dacdm/metrics.hpp"
#include "dacdm/pipeline.hpp"
#include "dacdm/sampler.hpp"
#include "dacdm/uda.hpp"

namespace fs = std::filesystem;
using namespace dacdm;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "flat key=value config file");
  app->add_option("--set", c.sets, "override one config entry, key=value (repeatable)");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--out-dir", c.out_dir, "output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) cfg = load_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

DiffusionTrainConfig diffusion_config(const ExperimentConfig& cfg, const DomainDataset& ref) {
  DiffusionTrainConfig d = cfg.diffusion;
  d.seed = derive_seed(cfg.seed, "stage/diffusion");
  d.shape.dim = ref.dim;
  d.shape.num_classes = ref.num_classes;
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-guided conditional diffusion for unsupervised domain adaptation"};
  app.require_subcommand(1);

  Common gen_c, uda_c, dif_c, clf_c, smp_c, pip_c, swp_c, ad_c, bnd_c, ev_c;

  auto* gen = app.add_subcommand("gen-data", "write source.csv and target.csv");
  add_common(gen, gen_c);

  auto* uda = app.add_subcommand("train-uda", "train a task model on labeled data plus unlabeled target");
  add_common(uda, uda_c);
  std::string uda_labeled, uda_target, uda_out = "task_model.ckpt";
  uda->add_option("--labeled", uda_labeled, "labeled dataset CSV")->required();
  uda->add_option("--target", uda_target, "target dataset CSV")->required();
  uda->add_option("--model-out", uda_out, "checkpoint file name inside --out-dir");

  auto* dif = app.add_subcommand("train-diffusion", "train the label-conditioned denoiser");
  add_common(dif, dif_c);
  std::string dif_source, dif_target, dif_labeler, dif_out = "denoiser.ckpt";
  bool dif_target_only = false;
  dif->add_option("--source", dif_source, "source dataset CSV");
  dif->add_option("--target", dif_target, "target dataset CSV")->required();
  dif->add_option("--pseudo-labeler", dif_labeler, "task model checkpoint used to label the target");
  dif->add_flag("--target-only", dif_target_only, "train on the target set alone");
  dif->add_option("--model-out", dif_out, "checkpoint file name inside --out-dir");

  auto* clf = app.add_subcommand("train-domain-clf", "train the noisy-input domain classifier");
  add_common(clf, clf_c);
  std::string clf_source, clf_target, clf_out = "domain_classifier.ckpt";
  clf->add_option("--source", clf_source, "source dataset CSV")->required();
  clf->add_option("--target", clf_target, "target dataset CSV")->required();
  clf->add_option("--model-out", clf_out, "checkpoint file name inside --out-dir");

  auto* smp = app.add_subcommand("generate", "sample a generated dataset");
  add_common(smp, smp_c);
  std::string smp_denoiser, smp_classifier, smp_out = "generated.csv";
  smp->add_option("--denoiser", smp_denoiser, "denoiser checkpoint")->required();
  smp->add_option("--classifier", smp_classifier, "domain classifier checkpoint (enables guidance)");
  smp->add_option("--data-out", smp_out, "dataset file name inside --out-dir");

  auto* pip = app.add_subcommand("pipeline", "run the whole chain for one seed");
  add_common(pip, pip_c);

  auto* swp = app.add_subcommand("sweep", "run the pipeline over values of one key and all seeds");
  add_common(swp, swp_c);
  std::string swp_key, swp_values;
  swp->add_option("--key", swp_key, "generate.per_class, guidance.scale or solver.M")->required();
  swp->add_option("--values", swp_values, "comma-separated values")->required();

  auto* ad = app.add_subcommand("a-distance", "proxy A-distance between two datasets");
  add_common(ad, ad_c);
  std::string ad_a, ad_b;
  ad->add_option("--a", ad_a, "first dataset CSV")->required();
  ad->add_option("--b", ad_b, "second dataset CSV")->required();

  auto* bnd = app.add_subcommand("bound", "evaluate the augmented-source generalization bound");
  add_common(bnd, bnd_c);
  std::string bnd_fsrc, bnd_fhat, bnd_source, bnd_generated, bnd_target;
  bnd->add_option("--source-model", bnd_fsrc, "task model trained on source only")->required();
  bnd->add_option("--model", bnd_fhat, "task model under test")->required();
  bnd->add_option("--source", bnd_source, "source dataset CSV")->required();
  bnd->add_option("--generated", bnd_generated, "generated dataset CSV");
  bnd->add_option("--target", bnd_target, "target dataset CSV with ground truth")->required();

  auto* ev = app.add_subcommand("eval", "per-class accuracy of a task model");
  add_common(ev, ev_c);
  std::string ev_model, ev_data;
  ev->add_option("--model", ev_model, "task model checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto cfg = resolve(gen_c);
      const auto [source, target] = make_domains(cfg);
      write_dataset(source, out_path(gen_c, "source.csv"));
      write_dataset(target, out_path(gen_c, "target.csv"));
      std::cout << "wrote " << source.size() << " source and " << target.size() << " target points to "
                << gen_c.out_dir << "\n";
    } else if (uda->parsed()) {
      const auto cfg = resolve(uda_c);
      UdaConfig u = cfg.uda;
      u.seed = derive_seed(cfg.seed, "stage/uda");
      const auto labeled = read_dataset(fs::path(uda_labeled));
      const auto target = read_dataset(fs::path(uda_target));
      const auto model = train_uda(labeled, target, u).model;
      model.to_checkpoint().save(out_path(uda_c, uda_out));
      write_eval_csv(evaluate(model, target), std::cout);
    } else if (dif->parsed()) {
      const auto cfg = resolve(dif_c);
      const auto sched = cfg.schedule();
      auto target = read_dataset(fs::path(dif_target));
      if (!dif_labeler.empty()) {
        const auto labeler = TaskModel::from_checkpoint(Checkpoint::load(dif_labeler));
        target = pseudo_label(labeler, target);
      }
      DiffusionTrainResult res;
      if (dif_target_only) {
        res = train_target_only(target, sched, diffusion_config(cfg, target));
      } else {
        if (dif_source.empty()) throw ConfigError("--source is required unless --target-only is given");
        const auto source = read_dataset(fs::path(dif_source));
        const auto pool = build_pool(source, target, nullptr, Conditioning::Class, {});
        res = train_denoiser(pool, sched, diffusion_config(cfg, source));
      }
      res.model.to_checkpoint().save(out_path(dif_c, dif_out));
      std::ofstream trace(out_path(dif_c, "diffusion_loss.csv"));
      trace << "iteration,loss\n";
      for (std::size_t i = 0; i < res.loss_trace.size(); ++i) trace << i << ',' << format_double(res.loss_trace[i]) << '\n';
    } else if (clf->parsed()) {
      const auto cfg = resolve(clf_c);
      ClassifierTrainConfig c = cfg.classifier;
      c.seed = derive_seed(cfg.seed, "stage/domain_classifier");
      c.diagnostic_steps = {1, cfg.diffusion_steps / 4, cfg.diffusion_steps / 2, cfg.diffusion_steps};
      const auto res = train_domain_classifier(read_dataset(fs::path(clf_source)), read_dataset(fs::path(clf_target)),
                                               cfg.schedule(), c);
      res.classifier.to_checkpoint().save(out_path(clf_c, clf_out));
      std::cout << "t,accuracy\n";
      for (const auto& [t, acc] : res.accuracy_by_t) std::cout << t << ',' << format_double(acc) << '\n';
    } else if (smp->parsed()) {
      const auto cfg = resolve(smp_c);
      const auto sched = cfg.schedule();
      const auto den = ConditionedDenoiser::from_checkpoint(Checkpoint::load(smp_denoiser));
      std::optional<MlpNoisyClassifier> domain_clf;
      std::vector<GuidanceTerm> terms;
      if (!smp_classifier.empty()) {
        domain_clf = MlpNoisyClassifier::from_checkpoint(Checkpoint::load(smp_classifier));
        terms.push_back({&*domain_clf, cfg.guidance.target_label, cfg.guidance.scale});
      }
      const GuidedPredictor guided(den, sched, terms, cfg.guidance.rule);
      GenerateConfig g;
      g.total = cfg.per_class * den.num_classes();
      g.class_rule = cfg.class_rule;
      g.formula = cfg.solver_formula;
      g.seed = derive_seed(cfg.seed, "stage/generate");
      g.threads = cfg.threads;
      const auto data = generate_dataset(guided, den.num_classes(), sched, make_plan(sched, cfg.solver_steps), g);
      write_dataset(data, out_path(smp_c, smp_out));
      std::cout << "wrote " << data.size() << " generated points\n";
    } else if (pip->parsed()) {
      const auto cfg = resolve(pip_c);
      StageCache cache(fs::path(pip_c.out_dir) / "stages");
      RunOptions opts{pip_c.out_dir, &cache, true};
      const auto m = run_pipeline(cfg, opts);
      std::cout << m.to_key_values().to_text();
      return m.ok ? 0 : 1;
    } else if (swp->parsed()) {
      const auto cfg = resolve(swp_c);
      StageCache cache(fs::path(swp_c.out_dir) / "stages");
      RunOptions opts{swp_c.out_dir, &cache, false};
      const auto res = run_sweep(cfg, swp_key, split_values(swp_values), opts);
      std::ofstream runs(out_path(swp_c, "sweep_runs.csv"));
      res.write_runs_csv(runs);
      std::ofstream summary(out_path(swp_c, "sweep_summary.csv"));
      res.write_summary_csv(summary);
      res.write_summary_csv(std::cout);
    } else if (ad->parsed()) {
      const auto cfg = resolve(ad_c);
      ADistanceConfig a = cfg.a_distance;
      a.seed = derive_seed(cfg.seed, "stage/a_distance");
      const auto r = a_distance_detail(read_dataset(fs::path(ad_a)), read_dataset(fs::path(ad_b)), a);
      std::cout << "a_distance," << format_double(r.distance) << "\ntest_error," << format_double(r.test_error) << '\n';
    } else if (bnd->parsed()) {
      const auto cfg = resolve(bnd_c);
      const auto fsrc = TaskModel::from_checkpoint(Checkpoint::load(bnd_fsrc));
      const auto fhat = TaskModel::from_checkpoint(Checkpoint::load(bnd_fhat));
      const auto source = read_dataset(fs::path(bnd_source));
      const auto target = read_dataset(fs::path(bnd_target));
      const auto generated = bnd_generated.empty() ? DomainDataset{{}, source.num_classes, source.dim}
                                                   : read_dataset(fs::path(bnd_generated));
      const DomainDataset* sets[] = {&source, &generated, &target};
      const auto grid = make_grid(sets, cfg.grid_angles, cfg.grid_biases);
      const auto r = bound_report(fsrc, fhat, source, generated, target, grid, cfg.delta);
      std::cout << r.to_key_values().to_text();
    } else if (ev->parsed()) {
      const auto model = TaskModel::from_checkpoint(Checkpoint::load(ev_model));
      write_eval_csv(evaluate(model, read_dataset(fs::path(ev_data))), std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
