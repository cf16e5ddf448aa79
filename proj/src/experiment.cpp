#include "vncseg/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vncseg/dataset.hpp"
#include "vncseg/folds.hpp"
#include "vncseg/nn/checkpoint.hpp"
#include "vncseg/overlay.hpp"
#include "vncseg/postprocess.hpp"
#include "vncseg/rng.hpp"
#include "vncseg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vncseg {

void ExperimentConfig::validate() const {
  preprocess.validate();
  network.validate();
  train.validate();
  if (connectivity != 6 && connectivity != 26)
    throw std::runtime_error("connectivity must be 6 or 26, got " +
                             std::to_string(connectivity));
  if (network.in_channels != preprocess.slab_depth)
    throw std::runtime_error("network expects " + std::to_string(network.in_channels) +
                             " input channels but the slab depth is " +
                             std::to_string(preprocess.slab_depth));
  if (network.n_classes != kNumClasses)
    throw std::runtime_error("network emits " + std::to_string(network.n_classes) +
                             " classes, the label set has " + std::to_string(kNumClasses));
}

namespace {

void check_keys(const json& j, const std::string& scope,
                std::initializer_list<const char*> allowed, const std::string& ctx) {
  if (!j.is_object())
    throw std::runtime_error(scope + " must be a JSON object in " + ctx);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) known = true;
    if (!known)
      throw std::runtime_error("unknown key '" + it.key() + "' in " + scope + " of " + ctx);
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& ctx) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("invalid JSON in " + ctx + ": " + e.what());
  }
  check_keys(j, "config",
             {"preprocess", "network", "train", "connectivity", "native_space_eval",
              "data", "out"},
             ctx);

  ExperimentConfig cfg;
  try {
    if (j.contains("preprocess")) {
      const json& p = j["preprocess"];
      check_keys(p, "preprocess",
                 {"sigma_mm", "target_spacing_mm", "window_lo_hu", "window_hi_hu",
                  "slab_depth"},
                 ctx);
      cfg.preprocess.sigma_mm = p.value("sigma_mm", cfg.preprocess.sigma_mm);
      cfg.preprocess.target_spacing_mm =
          p.value("target_spacing_mm", cfg.preprocess.target_spacing_mm);
      cfg.preprocess.window_lo_hu = p.value("window_lo_hu", cfg.preprocess.window_lo_hu);
      cfg.preprocess.window_hi_hu = p.value("window_hi_hu", cfg.preprocess.window_hi_hu);
      cfg.preprocess.slab_depth = p.value("slab_depth", cfg.preprocess.slab_depth);
    }
    if (j.contains("network")) {
      const json& n = j["network"];
      check_keys(n, "network",
                 {"in_channels", "n_classes", "base_channels", "n_down", "n_up",
                  "n_res_blocks"},
                 ctx);
      cfg.network.in_channels = n.value("in_channels", cfg.network.in_channels);
      cfg.network.n_classes = n.value("n_classes", cfg.network.n_classes);
      cfg.network.base_channels = n.value("base_channels", cfg.network.base_channels);
      cfg.network.n_down = n.value("n_down", cfg.network.n_down);
      cfg.network.n_up = n.value("n_up", cfg.network.n_up);
      cfg.network.n_res_blocks = n.value("n_res_blocks", cfg.network.n_res_blocks);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, "train",
                 {"iterations", "batch_size", "lr0", "decay_factor", "decay_every",
                  "n_folds", "seed", "dice_eps", "val_fraction"},
                 ctx);
      cfg.train.iterations = t.value("iterations", cfg.train.iterations);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.lr0 = t.value("lr0", cfg.train.lr0);
      cfg.train.decay_factor = t.value("decay_factor", cfg.train.decay_factor);
      cfg.train.decay_every = t.value("decay_every", cfg.train.decay_every);
      cfg.train.n_folds = t.value("n_folds", cfg.train.n_folds);
      cfg.train.seed = t.value("seed", cfg.train.seed);
      cfg.train.dice_eps = t.value("dice_eps", cfg.train.dice_eps);
      cfg.train.val_fraction = t.value("val_fraction", cfg.train.val_fraction);
    }
    cfg.connectivity = j.value("connectivity", cfg.connectivity);
    cfg.native_space_eval = j.value("native_space_eval", cfg.native_space_eval);
    cfg.data_manifest = j.value("data", cfg.data_manifest);
    cfg.out_dir = j.value("out", cfg.out_dir);
  } catch (const json::type_error& e) {
    throw std::runtime_error("bad value type in " + ctx + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_experiment_config(text, path);
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["preprocess"] = {{"sigma_mm", cfg.preprocess.sigma_mm},
                     {"target_spacing_mm", cfg.preprocess.target_spacing_mm},
                     {"window_lo_hu", cfg.preprocess.window_lo_hu},
                     {"window_hi_hu", cfg.preprocess.window_hi_hu},
                     {"slab_depth", cfg.preprocess.slab_depth}};
  j["network"] = {{"in_channels", cfg.network.in_channels},
                  {"n_classes", cfg.network.n_classes},
                  {"base_channels", cfg.network.base_channels},
                  {"n_down", cfg.network.n_down},
                  {"n_up", cfg.network.n_up},
                  {"n_res_blocks", cfg.network.n_res_blocks}};
  j["train"] = {{"iterations", cfg.train.iterations},
                {"batch_size", cfg.train.batch_size},
                {"lr0", cfg.train.lr0},
                {"decay_factor", cfg.train.decay_factor},
                {"decay_every", cfg.train.decay_every},
                {"n_folds", cfg.train.n_folds},
                {"seed", cfg.train.seed},
                {"dice_eps", cfg.train.dice_eps},
                {"val_fraction", cfg.train.val_fraction}};
  j["connectivity"] = cfg.connectivity;
  j["native_space_eval"] = cfg.native_space_eval;
  j["data"] = cfg.data_manifest;
  j["out"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void copy_checkpoint(const std::string& src_prefix, const std::string& dst_prefix) {
  for (const char* suffix : {".ckpt.json", ".ckpt.raw"})
    fs::copy_file(src_prefix + suffix, dst_prefix + suffix,
                  fs::copy_options::overwrite_existing);
}

std::string checkpoint_prefix(const std::string& path) {
  std::string p = path;
  for (const char* suffix : {".ckpt.json", ".ckpt.raw"}) {
    std::size_t n = std::string(suffix).size();
    if (p.size() > n && p.compare(p.size() - n, n, suffix) == 0)
      return p.substr(0, p.size() - n);
  }
  return p;
}

const ManifestEntry& find_entry(const std::vector<ManifestEntry>& entries,
                                const std::string& id) {
  for (const auto& e : entries)
    if (e.id == id) return e;
  throw std::runtime_error("id " + id + " not in manifest");
}

std::string resolve(const std::string& manifest_path, const std::string& rel) {
  fs::path p(rel);
  if (p.is_absolute()) return rel;
  return (fs::path(manifest_path).parent_path() / p).string();
}

}  // namespace

CrossvalResult run_crossval(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.data_manifest.empty())
    throw std::runtime_error("no dataset manifest given (data)");
  if (cfg.out_dir.empty()) throw std::runtime_error("no output directory given (out)");
  fs::create_directories(cfg.out_dir);
  fs::create_directories(fs::path(cfg.out_dir) / "ensemble");

  auto entries = read_dataset_manifest(cfg.data_manifest);
  if (static_cast<int>(entries.size()) < cfg.train.n_folds)
    throw std::runtime_error("cannot split " + std::to_string(entries.size()) +
                             " cases into " + std::to_string(cfg.train.n_folds) +
                             " folds");
  std::vector<std::string> ids;
  ids.reserve(entries.size());
  for (const auto& e : entries) ids.push_back(e.id);

  auto folds = make_folds(ids, cfg.train.n_folds, cfg.train.seed, cfg.train.val_fraction);
  write_folds_json(folds, (fs::path(cfg.out_dir) / "folds.json").string());
  write_text((fs::path(cfg.out_dir) / "config.resolved.json").string(),
             experiment_config_to_json(cfg));

  CrossvalResult res;
  std::vector<CaseMetrics> all_cases;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::string fold_dir = (fs::path(cfg.out_dir) / ("fold_" + std::to_string(f))).string();
    fs::create_directories(fold_dir);
    std::printf("[fold %zu] train %zu  val %zu  test %zu\n", f, folds[f].train.size(),
                folds[f].val.size(), folds[f].test.size());
    std::fflush(stdout);

    Dataset train_set = load_cases(cfg.data_manifest, folds[f].train, cfg.preprocess);
    Dataset val_set = load_cases(cfg.data_manifest, folds[f].val, cfg.preprocess);

    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.train.seed, 0xF01D, static_cast<std::uint64_t>(f));
    TrainResult tr = train_model(train_set, val_set, cfg.network, tc,
                                 cfg.preprocess.slab_depth, fold_dir);
    std::printf("[fold %zu] best val dice %.4f at iteration %d\n", f, tr.best_val_dice,
                tr.best_iteration);
    std::fflush(stdout);
    copy_checkpoint(checkpoint_prefix(tr.best_path),
                    (fs::path(cfg.out_dir) / "ensemble" / ("fold_" + std::to_string(f)))
                        .string());

    auto net = load_checkpoint(tr.best_path);
    std::vector<Network<float>*> models{net.get()};
    std::vector<CaseMetrics> fold_cases;
    for (const auto& id : folds[f].test) {
      const ManifestEntry& e = find_entry(entries, id);
      Volume native = read_volume(resolve(cfg.data_manifest, e.vnc_path));
      LabelVolume ref_native = read_labels(resolve(cfg.data_manifest, e.labels_path));
      Volume img = preprocess_image(native, cfg.preprocess);
      LabelVolume pred = predict_labels(models, img, cfg.preprocess.slab_depth);
      pred = keep_largest_component(pred, cfg.connectivity);

      LabelVolume eval_pred, ref;
      if (cfg.native_space_eval) {
        eval_pred = resample_labels_to_grid(pred, ref_native.dims, ref_native.spacing_mm,
                                            ref_native.origin_mm);
        ref = ref_native;
      } else {
        eval_pred = pred;
        ref = preprocess_labels(ref_native, cfg.preprocess);
      }
      write_labels(eval_pred, (fs::path(fold_dir) / ("pred_" + id)).string());
      CaseMetrics cm = evaluate_case(eval_pred, ref);
      cm.id = id;
      fold_cases.push_back(cm);
      all_cases.push_back(cm);
    }

    Report fr = aggregate_cases(fold_cases);
    FoldSummary fsum;
    fsum.fold = static_cast<int>(f);
    fsum.n_cases = fr.n_cases;
    fsum.mean_fg_dice = fr.mean_fg_dice;
    fsum.mean_assd_mm = fr.mean_assd_mm;
    fsum.assd_undefined = fr.assd_undefined;
    fsum.best_val_dice = tr.best_val_dice;
    res.folds.push_back(fsum);
    std::printf("[fold %zu] test mean DSC %.4f  mean ASSD %.3f mm  (undefined %d)\n", f,
                fsum.mean_fg_dice, fsum.mean_assd_mm, fsum.assd_undefined);
    std::fflush(stdout);
  }

  res.overall = aggregate_cases(all_cases);

  json jr = json::parse(report_to_json_string(res.overall, all_cases));
  jr["folds"] = json::array();
  for (const auto& s : res.folds)
    jr["folds"].push_back({{"fold", s.fold},
                           {"n_cases", s.n_cases},
                           {"mean_fg_dice", s.mean_fg_dice},
                           {"mean_assd_mm", s.mean_assd_mm},
                           {"assd_undefined", s.assd_undefined},
                           {"best_val_dice", s.best_val_dice}});
  write_text((fs::path(cfg.out_dir) / "report.json").string(), jr.dump(2) + "\n");

  std::string txt = format_report_table(res.overall);
  txt += "\n";
  char line[160];
  for (const auto& s : res.folds) {
    std::snprintf(line, sizeof(line),
                  "fold %d: mean DSC %.4f, mean ASSD %.3f mm over %d cases\n", s.fold,
                  s.mean_fg_dice, s.mean_assd_mm, s.n_cases);
    txt += line;
  }
  write_text((fs::path(cfg.out_dir) / "report.txt").string(), txt);
  std::printf("%s", txt.c_str());
  std::fflush(stdout);
  return res;
}

void run_predict(const ExperimentConfig& cfg, const std::string& model_dir,
                 const std::string& image_path, const std::string& out_prefix,
                 bool save_probs) {
  cfg.validate();
  auto paths = list_checkpoints(model_dir);
  if (paths.empty()) throw std::runtime_error("no checkpoints found in " + model_dir);

  std::vector<std::unique_ptr<Network<float>>> nets;
  std::vector<Network<float>*> models;
  for (const auto& p : paths) {
    nets.push_back(load_checkpoint(p));
    if (nets.back()->config().in_channels != cfg.preprocess.slab_depth)
      throw std::runtime_error("checkpoint " + p + " expects " +
                               std::to_string(nets.back()->config().in_channels) +
                               " input channels but the slab depth is " +
                               std::to_string(cfg.preprocess.slab_depth));
    models.push_back(nets.back().get());
  }

  Volume native = read_volume(image_path);
  Volume img = preprocess_image(native, cfg.preprocess);
  std::vector<Volume> probs = ensemble_predict(models, img, cfg.preprocess.slab_depth);
  LabelVolume labels = keep_largest_component(argmax_labels(probs), cfg.connectivity);

  if (!fs::path(out_prefix).parent_path().empty())
    fs::create_directories(fs::path(out_prefix).parent_path());
  write_labels(labels, out_prefix + "_labels");
  if (save_probs)
    for (int c = 0; c < kNumClasses; ++c)
      write_volume(probs[c], out_prefix + "_prob" + std::to_string(c));

  std::printf("ensemble of %zu model(s); wrote %s_labels.mvol.{json,raw}\n", models.size(),
              out_prefix.c_str());
  auto vols = structure_volumes_ml(labels);
  for (int c = 1; c < kNumClasses; ++c)
    std::printf("  %-5s %8.2f mL\n", kClassNames[c], vols[c]);
  std::fflush(stdout);
}

CaseMetrics run_evaluate(const std::string& pred_path, const std::string& ref_path,
                         const std::string& out_json_path) {
  LabelVolume pred = read_labels(pred_path);
  LabelVolume ref = read_labels(ref_path);
  if (pred.dims != ref.dims || pred.spacing_mm != ref.spacing_mm)
    throw std::runtime_error("prediction and reference are on different grids");

  CaseMetrics cm = evaluate_case(pred, ref);
  cm.id = fs::path(pred_path).filename().string();
  std::vector<CaseMetrics> cases{cm};
  Report r = aggregate_cases(cases);
  std::printf("%s", format_report_table(r).c_str());
  std::printf("mean foreground DSC %.4f\n", r.mean_fg_dice);
  std::fflush(stdout);
  if (!out_json_path.empty()) write_text(out_json_path, report_to_json_string(r, cases));
  return cm;
}

void run_report_overlays(const ExperimentConfig& cfg, const std::string& image_path,
                         const std::string& labels_path, const std::string& out_dir,
                         double alpha) {
  Volume image = read_volume(image_path);
  LabelVolume labels = read_labels(labels_path);
  if (image.dims != labels.dims) {
    image = resample_trilinear(gaussian_smooth(image, cfg.preprocess.sigma_mm),
                               cfg.preprocess.target_spacing_mm);
    if (image.dims != labels.dims)
      throw std::runtime_error("image and labels are on different grids");
  }
  OverlayOptions opts;
  opts.window_lo = cfg.preprocess.window_lo_hu;
  opts.window_hi = cfg.preprocess.window_hi_hu;
  opts.alpha = alpha;
  write_overlay_slices(image, labels, out_dir, opts);
  std::printf("wrote %d overlay slices to %s\n", image.dims[2], out_dir.c_str());
  std::fflush(stdout);
}

}  // namespace vncseg
