#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vncseg/dataset.hpp"
#include "vncseg/nn/checkpoint.hpp"
#include "vncseg/nn/network.hpp"
#include "vncseg/optim.hpp"

namespace vncseg {

struct TrainResult {
  int first_iteration = 0;
  std::vector<double> losses;  // one per executed iteration
  std::string final_path, best_path;
  double best_val_dice = -1.0;
  int best_iteration = -1;
};

// Seeded end-to-end: parameter init and every batch draw derive from
// cfg.seed, so identical inputs give byte-identical checkpoints and logs.
// Writes <out_dir>/train_log.csv plus final and best checkpoints. Validation
// Dice is evaluated every 500 iterations; the loss is logged every 50.
// resume_path continues from a final checkpoint (with optimizer state).
TrainResult train_model(const Dataset& train_set, const Dataset& val_set,
                        const NetworkConfig& ncfg, const TrainConfig& cfg,
                        int slab_depth, const std::string& out_dir,
                        const std::string& resume_path = "");

// Mean of per-model softmax probabilities, one probability volume per class.
// In-plane dims are padded to the network's downsampling factor by edge
// replication and cropped back.
std::vector<Volume> ensemble_predict(const std::vector<Network<float>*>& models,
                                     const Volume& image, int slab_depth);

LabelVolume predict_labels(const std::vector<Network<float>*>& models,
                           const Volume& image, int slab_depth);

// Best checkpoints of a model directory, sorted by file name.
std::vector<std::string> list_checkpoints(const std::string& dir);

}  // namespace vncseg
