#pragma once

#include <memory>
#include <string>

#include "vncseg/nn/network.hpp"
#include "vncseg/optim.hpp"

namespace vncseg {

// Optimizer and loop state carried alongside the weights so training can
// resume exactly where it stopped.
struct TrainState {
  int iteration = 0;
  double best_val_dice = -1.0;
  bool has_adam = false;
  AdamState<float> adam;
};

// On-disk form is <prefix>.ckpt.json (config + tensor directory) plus
// <prefix>.ckpt.raw (float32 little endian, concatenated in directory order).
void save_checkpoint(Network<float>& net, const std::string& path,
                     const TrainState* ts = nullptr);
std::unique_ptr<Network<float>> load_checkpoint(const std::string& path,
                                                TrainState* ts = nullptr);

}  // namespace vncseg
