#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "vncseg/volume.hpp"

namespace vncseg {

// Fixed overlay palette, indexed by class id (entry 0 is unused).
extern const std::array<std::array<std::uint8_t, 3>, kNumClasses> kClassColors;

struct OverlayOptions {
  double window_lo = -400.0;
  double window_hi = 600.0;
  double alpha = 0.4;  // label color weight
};

// Writes one binary PPM (P6) per axial slice, named slice_0000.ppm and so on.
// Background voxels show the windowed gray value; labeled voxels blend
// round((1-alpha)*gray + alpha*color) per channel.
void write_overlay_slices(const Volume& image, const LabelVolume& labels,
                          const std::string& out_dir, const OverlayOptions& opts);

}  // namespace vncseg
