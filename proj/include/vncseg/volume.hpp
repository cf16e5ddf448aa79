#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace vncseg {

constexpr int kNumClasses = 8;  // background + 7 structures

// Display names, indexed by class id.
extern const std::array<const char*, kNumClasses> kClassNames;

enum class Dtype { Int16, Uint8, Float32 };

const char* dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& name);
std::size_t dtype_size(Dtype d);

// Regular 3D grid, x fastest in memory. The physical center of voxel (i,j,k)
// is origin_mm + (i*sx, j*sy, k*sz).
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::array<double, 3> origin_mm{0.0, 0.0, 0.0};
  Dtype dtype = Dtype::Float32;
  std::vector<float> data;  // decoded samples; dtype is the on-disk encoding

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }

  bool same_grid(const Volume& o) const {
    return dims == o.dims && spacing_mm == o.spacing_mm && origin_mm == o.origin_mm;
  }
};

// Segmentation map on the same kind of grid; values are class ids 0..7.
struct LabelVolume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::array<double, 3> origin_mm{0.0, 0.0, 0.0};
  std::vector<std::uint8_t> data;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  std::uint8_t at(int i, int j, int k) const { return data[index(i, j, k)]; }
  std::uint8_t& at(int i, int j, int k) { return data[index(i, j, k)]; }
};

// Binary foreground mask with voxel spacing, used by the metric and
// postprocessing code.
struct Mask {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> data;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
};

Volume make_volume(std::array<int, 3> dims, std::array<double, 3> spacing_mm,
                   std::array<double, 3> origin_mm, Dtype dtype);
LabelVolume make_labels(std::array<int, 3> dims, std::array<double, 3> spacing_mm,
                        std::array<double, 3> origin_mm);

Mask class_mask(const LabelVolume& labels, int cls);

// On-disk form is a <prefix>.mvol.json header plus a <prefix>.mvol.raw blob,
// little endian, x fastest. `path` may be the prefix or either file name.
void write_volume(const Volume& v, const std::string& path);
Volume read_volume(const std::string& path);

// Labels travel as uint8 volumes; values are checked against kNumClasses.
void write_labels(const LabelVolume& l, const std::string& path);
LabelVolume read_labels(const std::string& path);

Volume labels_as_volume(const LabelVolume& l);
LabelVolume volume_as_labels(const Volume& v);

}  // namespace vncseg
