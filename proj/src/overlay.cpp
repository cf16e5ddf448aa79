#include "vncseg/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace vncseg {

namespace fs = std::filesystem;

const std::array<std::array<std::uint8_t, 3>, kNumClasses> kClassColors = {{
    {0, 0, 0},       // background, never drawn
    {230, 50, 50},   // LV cavity
    {60, 120, 230},  // RV
    {240, 180, 40},  // LA
    {60, 200, 200},  // RA
    {170, 70, 200},  // LV myocardium
    {240, 120, 40},  // ascending aorta
    {80, 200, 80},   // pulmonary trunk
}};

void write_overlay_slices(const Volume& image, const LabelVolume& labels,
                          const std::string& out_dir, const OverlayOptions& opts) {
  if (image.dims != labels.dims)
    throw std::runtime_error("image and labels have different dims");
  if (!(opts.window_lo < opts.window_hi))
    throw std::runtime_error("intensity window is empty");
  if (opts.alpha < 0.0 || opts.alpha > 1.0)
    throw std::runtime_error("alpha must be in [0, 1]");
  fs::create_directories(out_dir);

  int nx = image.dims[0], ny = image.dims[1], nz = image.dims[2];
  double inv = 1.0 / (opts.window_hi - opts.window_lo);
  std::vector<unsigned char> row(static_cast<std::size_t>(nx) * 3);

  for (int k = 0; k < nz; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%04d.ppm", k);
    std::ofstream out(fs::path(out_dir) / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (fs::path(out_dir) / name).string());
    out << "P6\n" << nx << " " << ny << "\n255\n";
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        double t = std::clamp((image.at(i, j, k) - opts.window_lo) * inv, 0.0, 1.0);
        long gray = std::lround(255.0 * t);
        int cls = labels.at(i, j, k);
        for (int ch = 0; ch < 3; ++ch) {
          long v = gray;
          if (cls != 0)
            v = std::lround((1.0 - opts.alpha) * gray +
                            opts.alpha * kClassColors[cls][ch]);
          row[3 * i + ch] = static_cast<unsigned char>(std::clamp(v, 0l, 255l));
        }
      }
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("cannot write " + (fs::path(out_dir) / name).string());
  }
}

}  // namespace vncseg
