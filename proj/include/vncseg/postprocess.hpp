#pragma once

#include <cstdint>
#include <vector>

#include "vncseg/volume.hpp"

namespace vncseg {

// Per-voxel argmax over one probability volume per class; ties go to the
// lowest class index.
LabelVolume argmax_labels(const std::vector<Volume>& class_probs);

struct Components {
  std::vector<std::int32_t> label;  // 0 background, components numbered from 1
  std::vector<std::int64_t> sizes;  // sizes[i] is the size of component i+1
  int count = 0;
};

// Component ids follow first-encounter order of the x-fastest scan.
// connectivity is 6 (faces) or 26 (faces, edges, corners).
Components connected_components(const Mask& m, int connectivity);

// Keeps, per foreground class, only the largest connected component (ties:
// the component met first in scan order); removed voxels become background.
LabelVolume keep_largest_component(const LabelVolume& l, int connectivity);

}  // namespace vncseg
