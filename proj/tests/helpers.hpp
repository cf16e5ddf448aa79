#pragma once

// Shared test fixtures and slow-but-obviously-correct reference
// implementations that the fast code is checked against.

#include <unistd.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vncseg/metrics.hpp"
#include "vncseg/rng.hpp"
#include "vncseg/tensor.hpp"
#include "vncseg/volume.hpp"

namespace testutil {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::string tmpl =
        (std::filesystem::temp_directory_path() / "vncseg_test_XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path);
}

// Volume with representable values for the given dtype and a randomized grid.
inline vncseg::Volume make_pattern_volume(std::array<int, 3> dims, vncseg::Dtype dt,
                                          std::uint64_t seed) {
  vncseg::Rng rng(seed);
  std::array<double, 3> sp, og;
  for (int a = 0; a < 3; ++a) {
    sp[a] = 0.5 + rng.uniform() * 1.5;
    og[a] = rng.uniform() * 20.0 - 10.0;
  }
  vncseg::Volume v = vncseg::make_volume(dims, sp, og, dt);
  for (auto& x : v.data) {
    switch (dt) {
      case vncseg::Dtype::Int16:
        x = static_cast<float>(static_cast<long>(rng.below(4001)) - 2000);
        break;
      case vncseg::Dtype::Uint8:
        x = static_cast<float>(rng.below(256));
        break;
      case vncseg::Dtype::Float32:
        x = static_cast<float>(rng.uniform() * 2000.0 - 1000.0);
        break;
    }
  }
  return v;
}

inline vncseg::LabelVolume make_random_labels(std::array<int, 3> dims, std::uint64_t seed,
                                              int n_classes = vncseg::kNumClasses) {
  vncseg::Rng rng(seed);
  vncseg::LabelVolume l = vncseg::make_labels(dims, {1, 1, 1}, {0, 0, 0});
  for (auto& x : l.data) x = static_cast<std::uint8_t>(rng.below(n_classes));
  return l;
}

inline vncseg::Mask make_random_mask(std::array<int, 3> dims,
                                     std::array<double, 3> spacing, std::uint64_t seed,
                                     double fg_prob) {
  vncseg::Rng rng(seed);
  vncseg::Mask m;
  m.dims = dims;
  m.spacing_mm = spacing;
  m.data.resize(m.voxel_count());
  for (auto& x : m.data) x = rng.uniform() < fg_prob ? 1 : 0;
  return m;
}

// ---- references ----

// Plain quadruple-loop convolution with double accumulation.
template <typename T>
vncseg::Tensor<T> naive_conv2d(const vncseg::Tensor<T>& x, const vncseg::Tensor<T>& w,
                               const vncseg::Tensor<T>& bias, int stride, int pad) {
  int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  int OC = w.shape[0], K = w.shape[2];
  int OH = (H + 2 * pad - K) / stride + 1;
  int OW = (W + 2 * pad - K) / stride + 1;
  vncseg::Tensor<T> out({B, OC, OH, OW});
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < OC; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = static_cast<double>(bias.data[oc]);
          for (int ic = 0; ic < C; ++ic)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                int ih = oh * stride + kh - pad;
                int iw = ow * stride + kw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += static_cast<double>(x(b, ic, ih, iw)) *
                       static_cast<double>(w(oc, ic, kh, kw));
              }
          out(b, oc, oh, ow) = static_cast<T>(acc);
        }
  return out;
}

struct RefComponents {
  std::vector<std::int32_t> label;
  std::vector<std::int64_t> sizes;
  int count = 0;
};

// Breadth-first flood fill, components numbered in scan-order of their first
// voxel. Mirrors the contract of the union-find implementation.
inline RefComponents bfs_components(const vncseg::Mask& m, int connectivity) {
  int nx = m.dims[0], ny = m.dims[1], nz = m.dims[2];
  RefComponents rc;
  rc.label.assign(m.voxel_count(), 0);
  std::vector<std::array<int, 3>> nbr;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        if (connectivity == 6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1) continue;
        nbr.push_back({dx, dy, dz});
      }
  std::deque<std::array<int, 3>> queue;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        std::size_t p = m.index(i, j, k);
        if (!m.data[p] || rc.label[p] != 0) continue;
        int id = ++rc.count;
        std::int64_t size = 0;
        rc.label[p] = id;
        queue.push_back({i, j, k});
        while (!queue.empty()) {
          auto [x, y, z] = queue.front();
          queue.pop_front();
          ++size;
          for (const auto& d : nbr) {
            int xx = x + d[0], yy = y + d[1], zz = z + d[2];
            if (xx < 0 || xx >= nx || yy < 0 || yy >= ny || zz < 0 || zz >= nz) continue;
            std::size_t q = m.index(xx, yy, zz);
            if (m.data[q] && rc.label[q] == 0) {
              rc.label[q] = id;
              queue.push_back({xx, yy, zz});
            }
          }
        }
        rc.sizes.push_back(size);
      }
  return rc;
}

// All-pairs surface distance, straight from the definition.
inline std::optional<double> brute_assd(const vncseg::Mask& a, const vncseg::Mask& b) {
  bool a_empty = true, b_empty = true;
  for (auto v : a.data)
    if (v) a_empty = false;
  for (auto v : b.data)
    if (v) b_empty = false;
  if (a_empty || b_empty) return std::nullopt;

  auto sa = vncseg::surface_voxels(a);
  auto sb = vncseg::surface_voxels(b);
  auto min_dist = [&](const std::array<int, 3>& p,
                      const std::vector<std::array<int, 3>>& surf,
                      const std::array<double, 3>& sp) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : surf) {
      double dx = (p[0] - q[0]) * sp[0];
      double dy = (p[1] - q[1]) * sp[1];
      double dz = (p[2] - q[2]) * sp[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    return std::sqrt(best);
  };
  double total = 0.0;
  for (const auto& p : sa) total += min_dist(p, sb, a.spacing_mm);
  for (const auto& p : sb) total += min_dist(p, sa, a.spacing_mm);
  return total / static_cast<double>(sa.size() + sb.size());
}

// Central difference of a scalar loss with respect to one slot.
template <typename Loss>
double central_diff(double& slot, Loss loss, double h) {
  double orig = slot;
  slot = orig + h;
  double lp = loss();
  slot = orig - h;
  double lm = loss();
  slot = orig;
  return (lp - lm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

struct PpmImage {
  int width = 0, height = 0, maxval = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row major
};

inline PpmImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 file: " + path);
  PpmImage img;
  in >> img.width >> img.height >> img.maxval;
  in.get();  // single whitespace before the pixel data
  if (!in || img.width <= 0 || img.height <= 0)
    throw std::runtime_error("bad PPM header in " + path);
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw std::runtime_error("short PPM payload in " + path);
  return img;
}

}  // namespace testutil
