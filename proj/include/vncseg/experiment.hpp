#pragma once

#include <string>
#include <vector>

#include "vncseg/metrics.hpp"
#include "vncseg/nn/network.hpp"
#include "vncseg/optim.hpp"
#include "vncseg/preprocess.hpp"

namespace vncseg {

// Everything a run needs, as one JSON-serializable blob. Files may set any
// subset of the keys; unknown keys are rejected.
struct ExperimentConfig {
  PreprocessConfig preprocess;
  NetworkConfig network;
  TrainConfig train;
  int connectivity = 26;
  bool native_space_eval = false;
  std::string data_manifest;  // "data"
  std::string out_dir;        // "out"

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& ctx);
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct FoldSummary {
  int fold = 0;
  int n_cases = 0;
  double mean_fg_dice = 0.0;
  double mean_assd_mm = 0.0;
  int assd_undefined = 0;
  double best_val_dice = -1.0;
};

struct CrossvalResult {
  std::vector<FoldSummary> folds;
  Report overall;
};

// The full protocol: split folds, train one model per fold on its train/val
// ids, predict and postprocess the held-out cases, evaluate, aggregate.
// Writes folds.json, config.resolved.json, per-fold artifacts, the collected
// best checkpoints under ensemble/, and report.{json,txt} into cfg.out_dir.
CrossvalResult run_crossval(const ExperimentConfig& cfg);

void run_predict(const ExperimentConfig& cfg, const std::string& model_dir,
                 const std::string& image_path, const std::string& out_prefix,
                 bool save_probs);

CaseMetrics run_evaluate(const std::string& pred_path, const std::string& ref_path,
                         const std::string& out_json_path);

void run_report_overlays(const ExperimentConfig& cfg, const std::string& image_path,
                         const std::string& labels_path, const std::string& out_dir,
                         double alpha);

}  // namespace vncseg
