#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vncseg/dataset.hpp"
#include "vncseg/experiment.hpp"
#include "vncseg/folds.hpp"
#include "vncseg/phantom.hpp"
#include "vncseg/train.hpp"

namespace fs = std::filesystem;
using namespace vncseg;

namespace {

ExperimentConfig base_config(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  return load_experiment_config(path);
}

void write_resolved_config(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "config.resolved.json", std::ios::binary);
  out << experiment_config_to_json(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segmentation of cardiac structures in low-contrast CT volumes"};
  app.require_subcommand(1);

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "synthetic dataset tools");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("gen", "generate a labeled two-domain phantom set");
  std::string gen_out;
  int gen_count = 18, gen_size = 64;
  double gen_spacing = 0.8, gen_noise = 20.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of cases");
  gen->add_option("--size", gen_size, "cubic volume edge in voxels");
  gen->add_option("--spacing", gen_spacing, "voxel spacing in mm");
  gen->add_option("--seed", gen_seed, "base seed; case i uses seed+i");
  gen->add_option("--noise-sd", gen_noise, "additive noise SD in HU");

  // preprocess
  auto* pp = app.add_subcommand("preprocess", "smooth, resample and normalize one volume");
  std::string pp_in, pp_out, pp_config;
  bool pp_is_labels = false;
  double pp_sigma = 0.0, pp_spacing = 0.0;
  pp->add_option("--in", pp_in, "input volume prefix")->required();
  pp->add_option("--out", pp_out, "output volume prefix")->required();
  pp->add_option("--config", pp_config, "experiment config JSON");
  pp->add_flag("--labels", pp_is_labels, "treat the input as a label map");
  pp->add_option("--sigma-mm", pp_sigma, "smoothing sigma in mm");
  pp->add_option("--spacing", pp_spacing, "target isotropic spacing in mm");

  // train
  auto* tr = app.add_subcommand("train", "train a single model on a dataset");
  std::string tr_data, tr_out, tr_config, tr_resume;
  std::uint64_t tr_seed = 0;
  int tr_iters = 0, tr_batch = 0, tr_decay_every = 0, tr_base = 0;
  double tr_lr = 0.0, tr_decay = 0.0, tr_valfrac = 0.0, tr_sigma = 0.0, tr_spacing = 0.0;
  tr->add_option("--data", tr_data, "dataset manifest JSON");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--config", tr_config, "experiment config JSON");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--iters", tr_iters, "training iterations");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--lr", tr_lr, "initial learning rate");
  tr->add_option("--decay", tr_decay, "learning-rate decay factor");
  tr->add_option("--decay-every", tr_decay_every, "iterations between decays");
  tr->add_option("--base-channels", tr_base, "channels after the stem");
  tr->add_option("--val-fraction", tr_valfrac, "held-out validation fraction");
  tr->add_option("--sigma-mm", tr_sigma, "smoothing sigma in mm");
  tr->add_option("--spacing", tr_spacing, "target isotropic spacing in mm");
  tr->add_option("--resume", tr_resume, "final checkpoint to continue from");

  // crossval
  auto* cv = app.add_subcommand("crossval", "cross-validated training and evaluation");
  std::string cv_data, cv_out, cv_config;
  std::uint64_t cv_seed = 0;
  int cv_folds = 0, cv_iters = 0, cv_batch = 0, cv_decay_every = 0, cv_base = 0,
      cv_conn = 0;
  double cv_lr = 0.0, cv_decay = 0.0, cv_valfrac = 0.0, cv_sigma = 0.0, cv_spacing = 0.0;
  bool cv_native = false;
  cv->add_option("--data", cv_data, "dataset manifest JSON");
  cv->add_option("--out", cv_out, "output directory");
  cv->add_option("--config", cv_config, "experiment config JSON");
  cv->add_option("--folds", cv_folds, "number of folds");
  cv->add_option("--seed", cv_seed, "split and training seed");
  cv->add_option("--iters", cv_iters, "training iterations per fold");
  cv->add_option("--batch", cv_batch, "batch size");
  cv->add_option("--lr", cv_lr, "initial learning rate");
  cv->add_option("--decay", cv_decay, "learning-rate decay factor");
  cv->add_option("--decay-every", cv_decay_every, "iterations between decays");
  cv->add_option("--base-channels", cv_base, "channels after the stem");
  cv->add_option("--val-fraction", cv_valfrac, "held-out validation fraction");
  cv->add_option("--sigma-mm", cv_sigma, "smoothing sigma in mm");
  cv->add_option("--spacing", cv_spacing, "target isotropic spacing in mm");
  cv->add_option("--connectivity", cv_conn, "component connectivity, 6 or 26");
  cv->add_flag("--native-space-eval", cv_native, "evaluate on the acquisition grid");

  // predict
  auto* pr = app.add_subcommand("predict", "segment one volume with a model ensemble");
  std::string pr_models, pr_in, pr_out, pr_config;
  int pr_conn = 0;
  double pr_sigma = 0.0, pr_spacing = 0.0;
  bool pr_probs = false;
  pr->add_option("--models", pr_models, "directory of best checkpoints")->required();
  pr->add_option("--in", pr_in, "input volume prefix")->required();
  pr->add_option("--out", pr_out, "output prefix")->required();
  pr->add_option("--config", pr_config, "experiment config JSON");
  pr->add_option("--connectivity", pr_conn, "component connectivity, 6 or 26");
  pr->add_option("--sigma-mm", pr_sigma, "smoothing sigma in mm");
  pr->add_option("--spacing", pr_spacing, "target isotropic spacing in mm");
  pr->add_flag("--save-probs", pr_probs, "also write per-class probability volumes");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "compare predicted labels to a reference");
  std::string ev_pred, ev_ref, ev_out;
  ev->add_option("--pred", ev_pred, "predicted label prefix")->required();
  ev->add_option("--ref", ev_ref, "reference label prefix")->required();
  ev->add_option("--out", ev_out, "metrics JSON to write");

  // report
  auto* rp = app.add_subcommand("report", "write per-slice overlay images");
  std::string rp_image, rp_labels, rp_out, rp_config;
  double rp_alpha = 0.4;
  rp->add_option("--image", rp_image, "gray-value volume prefix")->required();
  rp->add_option("--labels", rp_labels, "label volume prefix")->required();
  rp->add_option("--out", rp_out, "output directory")->required();
  rp->add_option("--config", rp_config, "experiment config JSON");
  rp->add_option("--alpha", rp_alpha, "label color weight in [0,1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "vncseg: error: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) {
      PhantomSpec spec;
      spec.size = gen_size;
      spec.spacing_mm = gen_spacing;
      spec.seed = gen_seed;
      spec.noise_sd_hu = gen_noise;
      auto entries = generate_phantom_dataset(gen_count, spec, gen_out);
      std::printf("wrote %zu cases to %s\n", entries.size(), gen_out.c_str());
    } else if (pp->parsed()) {
      ExperimentConfig cfg = base_config(pp_config);
      if (pp->count("--sigma-mm")) cfg.preprocess.sigma_mm = pp_sigma;
      if (pp->count("--spacing")) cfg.preprocess.target_spacing_mm = pp_spacing;
      cfg.preprocess.validate();
      if (pp_is_labels) {
        write_labels(preprocess_labels(read_labels(pp_in), cfg.preprocess), pp_out);
      } else {
        write_volume(preprocess_image(read_volume(pp_in), cfg.preprocess), pp_out);
      }
      std::printf("wrote %s.mvol.{json,raw}\n", pp_out.c_str());
    } else if (tr->parsed()) {
      ExperimentConfig cfg = base_config(tr_config);
      if (tr->count("--data")) cfg.data_manifest = tr_data;
      if (tr->count("--out")) cfg.out_dir = tr_out;
      if (tr->count("--seed")) cfg.train.seed = tr_seed;
      if (tr->count("--iters")) cfg.train.iterations = tr_iters;
      if (tr->count("--batch")) cfg.train.batch_size = tr_batch;
      if (tr->count("--lr")) cfg.train.lr0 = tr_lr;
      if (tr->count("--decay")) cfg.train.decay_factor = tr_decay;
      if (tr->count("--decay-every")) cfg.train.decay_every = tr_decay_every;
      if (tr->count("--base-channels")) cfg.network.base_channels = tr_base;
      if (tr->count("--val-fraction")) cfg.train.val_fraction = tr_valfrac;
      if (tr->count("--sigma-mm")) cfg.preprocess.sigma_mm = tr_sigma;
      if (tr->count("--spacing")) cfg.preprocess.target_spacing_mm = tr_spacing;
      cfg.validate();
      if (cfg.data_manifest.empty())
        throw std::runtime_error("no dataset manifest given (data)");
      if (cfg.out_dir.empty()) throw std::runtime_error("no output directory given (out)");

      auto entries = read_dataset_manifest(cfg.data_manifest);
      std::vector<std::string> ids;
      for (const auto& e : entries) ids.push_back(e.id);
      Fold split = make_train_val_split(ids, cfg.train.seed, cfg.train.val_fraction);
      Dataset train_set = load_cases(cfg.data_manifest, split.train, cfg.preprocess);
      Dataset val_set = load_cases(cfg.data_manifest, split.val, cfg.preprocess);
      write_resolved_config(cfg, cfg.out_dir);
      TrainResult res = train_model(train_set, val_set, cfg.network, cfg.train,
                                    cfg.preprocess.slab_depth, cfg.out_dir, tr_resume);
      std::printf("final checkpoint %s\n", res.final_path.c_str());
      std::printf("best checkpoint %s (val dice %.4f at iteration %d)\n",
                  res.best_path.c_str(), res.best_val_dice, res.best_iteration);
    } else if (cv->parsed()) {
      ExperimentConfig cfg = base_config(cv_config);
      if (cv->count("--data")) cfg.data_manifest = cv_data;
      if (cv->count("--out")) cfg.out_dir = cv_out;
      if (cv->count("--folds")) cfg.train.n_folds = cv_folds;
      if (cv->count("--seed")) cfg.train.seed = cv_seed;
      if (cv->count("--iters")) cfg.train.iterations = cv_iters;
      if (cv->count("--batch")) cfg.train.batch_size = cv_batch;
      if (cv->count("--lr")) cfg.train.lr0 = cv_lr;
      if (cv->count("--decay")) cfg.train.decay_factor = cv_decay;
      if (cv->count("--decay-every")) cfg.train.decay_every = cv_decay_every;
      if (cv->count("--base-channels")) cfg.network.base_channels = cv_base;
      if (cv->count("--val-fraction")) cfg.train.val_fraction = cv_valfrac;
      if (cv->count("--sigma-mm")) cfg.preprocess.sigma_mm = cv_sigma;
      if (cv->count("--spacing")) cfg.preprocess.target_spacing_mm = cv_spacing;
      if (cv->count("--connectivity")) cfg.connectivity = cv_conn;
      if (cv->count("--native-space-eval")) cfg.native_space_eval = cv_native;
      run_crossval(cfg);
    } else if (pr->parsed()) {
      ExperimentConfig cfg = base_config(pr_config);
      if (pr->count("--connectivity")) cfg.connectivity = pr_conn;
      if (pr->count("--sigma-mm")) cfg.preprocess.sigma_mm = pr_sigma;
      if (pr->count("--spacing")) cfg.preprocess.target_spacing_mm = pr_spacing;
      run_predict(cfg, pr_models, pr_in, pr_out, pr_probs);
    } else if (ev->parsed()) {
      run_evaluate(ev_pred, ev_ref, ev_out);
    } else if (rp->parsed()) {
      ExperimentConfig cfg = base_config(rp_config);
      run_report_overlays(cfg, rp_image, rp_labels, rp_out, rp_alpha);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "vncseg: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
