#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vncseg/dataset.hpp"
#include "vncseg/volume.hpp"

namespace vncseg {

// Analytic cardiac phantom: seven structures built from jittered ellipsoids
// and cylinders, rasterized in class order with earlier classes winning
// overlaps. Two intensity domains share one label map: a high-contrast one
// where blood pools stand out, and a low-contrast one where they do not.
struct PhantomSpec {
  int size = 64;              // cubic volume
  double spacing_mm = 0.8;
  std::uint64_t seed = 0;
  double noise_sd_hu = 20.0;
  // Mean intensity per class id; blood-pool classes are bright only in the
  // high-contrast domain.
  std::array<double, kNumClasses> contrast_hu = {40, 350, 350, 350, 350, 80, 350, 350};
  std::array<double, kNumClasses> noncontrast_hu = {30, 40, 40, 40, 40, 50, 40, 40};

  void validate() const;
};

struct PhantomCase {
  Volume contrast;     // int16
  Volume noncontrast;  // int16
  LabelVolume labels;
};

// Deterministic in the seed. Guarantees on the output labels: every class
// present, a >= 2 voxel empty border, and each structure one 26-connected
// component; violations throw instead of returning a bad case.
PhantomCase generate_phantom(const PhantomSpec& spec);

// Writes `count` cases (seed = spec.seed + index) plus manifest.json into
// out_dir and returns the manifest entries.
std::vector<ManifestEntry> generate_phantom_dataset(int count, const PhantomSpec& spec,
                                                    const std::string& out_dir);

}  // namespace vncseg
