#pragma once

#include "vncseg/tensor.hpp"
#include "vncseg/volume.hpp"

namespace vncseg {

struct PreprocessConfig {
  double sigma_mm = 1.0;
  double target_spacing_mm = 0.8;
  double window_lo_hu = -400.0;
  double window_hi_hu = 600.0;
  int slab_depth = 5;

  void validate() const;
};

// Separable Gaussian with per-axis sigma = sigma_mm / spacing, kernel radius
// ceil(3*sigma) with renormalized weights, replicated edges. Accumulates in
// double, emits float32. sigma_mm == 0 returns the input unchanged.
Volume gaussian_smooth(const Volume& v, double sigma_mm);

// Resamples to an isotropic grid. Output dims are round(n*s/t) per axis,
// clamped to >= 1; the origin is preserved and voxel centers sit at
// origin + i*spacing. Samples outside the input clamp to the edge.
Volume resample_trilinear(const Volume& v, double target_spacing_mm);
LabelVolume resample_nearest(const LabelVolume& l, double target_spacing_mm);

// Nearest-neighbour resample onto an explicit grid, matching voxel centers in
// physical space. Carries predictions back to the acquisition grid.
LabelVolume resample_labels_to_grid(const LabelVolume& l, std::array<int, 3> dims,
                                    std::array<double, 3> spacing_mm,
                                    std::array<double, 3> origin_mm);

// clamp((x - lo) / (hi - lo), 0, 1)
Volume normalize_intensity(const Volume& v, double lo, double hi);

// Stacks slab_depth consecutive z slices centered on center_z into a
// (depth, ny, nx) tensor, replicating the first/last slice past the ends.
Tensor<float> extract_slab(const Volume& v, int center_z, int slab_depth);

Volume preprocess_image(const Volume& v, const PreprocessConfig& cfg);
LabelVolume preprocess_labels(const LabelVolume& l, const PreprocessConfig& cfg);

}  // namespace vncseg
