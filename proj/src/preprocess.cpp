#include "vncseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace vncseg {

void PreprocessConfig::validate() const {
  if (sigma_mm < 0.0)
    throw std::runtime_error("sigma_mm must be >= 0, got " + std::to_string(sigma_mm));
  if (!(target_spacing_mm > 0.0))
    throw std::runtime_error("target spacing must be positive, got " +
                             std::to_string(target_spacing_mm));
  if (!(window_lo_hu < window_hi_hu))
    throw std::runtime_error("intensity window is empty: lo " +
                             std::to_string(window_lo_hu) + " >= hi " +
                             std::to_string(window_hi_hu));
  if (slab_depth < 1 || slab_depth % 2 == 0)
    throw std::runtime_error("slab depth must be odd and positive, got " +
                             std::to_string(slab_depth));
}

namespace {

std::vector<double> gaussian_kernel(double sigma_vox) {
  int radius = static_cast<int>(std::ceil(3.0 * sigma_vox));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int d = -radius; d <= radius; ++d) {
    double w = std::exp(-0.5 * (d / sigma_vox) * (d / sigma_vox));
    k[d + radius] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

// 1D pass along `axis` with edge replication; in and out hold dims[0]*dims[1]*dims[2]
// doubles in x-fastest order.
void smooth_axis(const std::array<int, 3>& dims, int axis, const std::vector<double>& kernel,
                 const std::vector<double>& in, std::vector<double>& out) {
  int radius = (static_cast<int>(kernel.size()) - 1) / 2;
  int nx = dims[0], ny = dims[1], nz = dims[2];
  std::array<std::size_t, 3> stride = {1, static_cast<std::size_t>(nx),
                                       static_cast<std::size_t>(nx) * ny};
  int n_axis = dims[axis];
  std::size_t s = stride[axis];
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        std::array<int, 3> idx = {i, j, k};
        std::size_t base = i + stride[1] * j + stride[2] * k;
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          int p = std::clamp(idx[axis] + d, 0, n_axis - 1);
          acc += kernel[d + radius] * in[base + (p - idx[axis]) * s];
        }
        out[base] = acc;
      }
}

}  // namespace

Volume gaussian_smooth(const Volume& v, double sigma_mm) {
  if (sigma_mm < 0.0)
    throw std::runtime_error("sigma_mm must be >= 0, got " + std::to_string(sigma_mm));
  if (sigma_mm == 0.0) return v;

  std::vector<double> buf_a(v.data.begin(), v.data.end());
  std::vector<double> buf_b(buf_a.size());
  for (int axis = 0; axis < 3; ++axis) {
    double sigma_vox = sigma_mm / v.spacing_mm[axis];
    smooth_axis(v.dims, axis, gaussian_kernel(sigma_vox), buf_a, buf_b);
    std::swap(buf_a, buf_b);
  }

  Volume out = make_volume(v.dims, v.spacing_mm, v.origin_mm, Dtype::Float32);
  for (std::size_t i = 0; i < buf_a.size(); ++i)
    out.data[i] = static_cast<float>(buf_a[i]);
  return out;
}

namespace {

std::array<int, 3> resampled_dims(const std::array<int, 3>& dims,
                                  const std::array<double, 3>& spacing, double target) {
  std::array<int, 3> out;
  for (int a = 0; a < 3; ++a) {
    long n = std::lround(dims[a] * spacing[a] / target);
    out[a] = static_cast<int>(std::max(1l, n));
  }
  return out;
}

// Output voxel i sits at source coordinate i * (target / spacing), clamped to
// the grid. Computing the scale once keeps same-spacing resampling an exact
// identity.
struct AxisMap {
  double scale;
  int n;
  double coord(int i) const { return std::clamp(i * scale, 0.0, double(n - 1)); }
};

}  // namespace

Volume resample_trilinear(const Volume& v, double target_spacing_mm) {
  if (!(target_spacing_mm > 0.0))
    throw std::runtime_error("target spacing must be positive, got " +
                             std::to_string(target_spacing_mm));
  std::array<int, 3> od = resampled_dims(v.dims, v.spacing_mm, target_spacing_mm);
  Volume out = make_volume(od, {target_spacing_mm, target_spacing_mm, target_spacing_mm},
                           v.origin_mm, Dtype::Float32);
  AxisMap mx{target_spacing_mm / v.spacing_mm[0], v.dims[0], };
  AxisMap my{target_spacing_mm / v.spacing_mm[1], v.dims[1], };
  AxisMap mz{target_spacing_mm / v.spacing_mm[2], v.dims[2], };

  for (int k = 0; k < od[2]; ++k) {
    double z = mz.coord(k);
    int z0 = static_cast<int>(z);
    int z1 = std::min(z0 + 1, v.dims[2] - 1);
    double fz = z - z0;
    for (int j = 0; j < od[1]; ++j) {
      double y = my.coord(j);
      int y0 = static_cast<int>(y);
      int y1 = std::min(y0 + 1, v.dims[1] - 1);
      double fy = y - y0;
      for (int i = 0; i < od[0]; ++i) {
        double x = mx.coord(i);
        int x0 = static_cast<int>(x);
        int x1 = std::min(x0 + 1, v.dims[0] - 1);
        double fx = x - x0;
        double c00 = v.at(x0, y0, z0) * (1.0 - fx) + v.at(x1, y0, z0) * fx;
        double c10 = v.at(x0, y1, z0) * (1.0 - fx) + v.at(x1, y1, z0) * fx;
        double c01 = v.at(x0, y0, z1) * (1.0 - fx) + v.at(x1, y0, z1) * fx;
        double c11 = v.at(x0, y1, z1) * (1.0 - fx) + v.at(x1, y1, z1) * fx;
        double c0 = c00 * (1.0 - fy) + c10 * fy;
        double c1 = c01 * (1.0 - fy) + c11 * fy;
        out.at(i, j, k) = static_cast<float>(c0 * (1.0 - fz) + c1 * fz);
      }
    }
  }
  return out;
}

LabelVolume resample_nearest(const LabelVolume& l, double target_spacing_mm) {
  if (!(target_spacing_mm > 0.0))
    throw std::runtime_error("target spacing must be positive, got " +
                             std::to_string(target_spacing_mm));
  std::array<int, 3> od = resampled_dims(l.dims, l.spacing_mm, target_spacing_mm);
  LabelVolume out = make_labels(
      od, {target_spacing_mm, target_spacing_mm, target_spacing_mm}, l.origin_mm);
  AxisMap mx{target_spacing_mm / l.spacing_mm[0], l.dims[0], };
  AxisMap my{target_spacing_mm / l.spacing_mm[1], l.dims[1], };
  AxisMap mz{target_spacing_mm / l.spacing_mm[2], l.dims[2], };

  for (int k = 0; k < od[2]; ++k) {
    int z = static_cast<int>(std::lround(mz.coord(k)));
    for (int j = 0; j < od[1]; ++j) {
      int y = static_cast<int>(std::lround(my.coord(j)));
      for (int i = 0; i < od[0]; ++i) {
        int x = static_cast<int>(std::lround(mx.coord(i)));
        out.at(i, j, k) = l.at(x, y, z);
      }
    }
  }
  return out;
}

LabelVolume resample_labels_to_grid(const LabelVolume& l, std::array<int, 3> dims,
                                    std::array<double, 3> spacing_mm,
                                    std::array<double, 3> origin_mm) {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1)
      throw std::runtime_error("target dims must be positive, got " +
                               std::to_string(dims[a]));
    if (!(spacing_mm[a] > 0.0))
      throw std::runtime_error("target spacing must be positive, got " +
                               std::to_string(spacing_mm[a]));
  }
  LabelVolume out = make_labels(dims, spacing_mm, origin_mm);
  for (int k = 0; k < dims[2]; ++k) {
    double pz = origin_mm[2] + k * spacing_mm[2];
    int z = std::clamp(static_cast<int>(std::lround((pz - l.origin_mm[2]) / l.spacing_mm[2])),
                       0, l.dims[2] - 1);
    for (int j = 0; j < dims[1]; ++j) {
      double py = origin_mm[1] + j * spacing_mm[1];
      int y = std::clamp(static_cast<int>(std::lround((py - l.origin_mm[1]) / l.spacing_mm[1])),
                         0, l.dims[1] - 1);
      for (int i = 0; i < dims[0]; ++i) {
        double px = origin_mm[0] + i * spacing_mm[0];
        int x = std::clamp(static_cast<int>(std::lround((px - l.origin_mm[0]) / l.spacing_mm[0])),
                           0, l.dims[0] - 1);
        out.at(i, j, k) = l.at(x, y, z);
      }
    }
  }
  return out;
}

Volume normalize_intensity(const Volume& v, double lo, double hi) {
  if (!(lo < hi))
    throw std::runtime_error("intensity window is empty: lo " + std::to_string(lo) +
                             " >= hi " + std::to_string(hi));
  Volume out = make_volume(v.dims, v.spacing_mm, v.origin_mm, Dtype::Float32);
  double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < v.data.size(); ++i)
    out.data[i] = static_cast<float>(std::clamp((v.data[i] - lo) * inv, 0.0, 1.0));
  return out;
}

Tensor<float> extract_slab(const Volume& v, int center_z, int slab_depth) {
  if (slab_depth < 1 || slab_depth % 2 == 0)
    throw std::runtime_error("slab depth must be odd and positive, got " +
                             std::to_string(slab_depth));
  if (center_z < 0 || center_z >= v.dims[2])
    throw std::runtime_error("slab center " + std::to_string(center_z) +
                             " outside volume with " + std::to_string(v.dims[2]) +
                             " slices");
  int nx = v.dims[0], ny = v.dims[1];
  Tensor<float> slab({slab_depth, ny, nx});
  int half = slab_depth / 2;
  for (int d = 0; d < slab_depth; ++d) {
    int z = std::clamp(center_z - half + d, 0, v.dims[2] - 1);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) slab(d, j, i) = v.at(i, j, z);
  }
  return slab;
}

Volume preprocess_image(const Volume& v, const PreprocessConfig& cfg) {
  cfg.validate();
  Volume s = gaussian_smooth(v, cfg.sigma_mm);
  Volume r = resample_trilinear(s, cfg.target_spacing_mm);
  return normalize_intensity(r, cfg.window_lo_hu, cfg.window_hi_hu);
}

LabelVolume preprocess_labels(const LabelVolume& l, const PreprocessConfig& cfg) {
  cfg.validate();
  return resample_nearest(l, cfg.target_spacing_mm);
}

}  // namespace vncseg
