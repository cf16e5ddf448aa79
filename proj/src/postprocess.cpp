#include "vncseg/postprocess.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace vncseg {

LabelVolume argmax_labels(const std::vector<Volume>& class_probs) {
  if (class_probs.size() != static_cast<std::size_t>(kNumClasses))
    throw std::runtime_error("argmax wants " + std::to_string(kNumClasses) +
                             " probability volumes, got " +
                             std::to_string(class_probs.size()));
  const Volume& first = class_probs[0];
  for (const auto& v : class_probs)
    if (!v.same_grid(first))
      throw std::runtime_error("probability volumes are on different grids");

  LabelVolume out = make_labels(first.dims, first.spacing_mm, first.origin_mm);
  std::size_t n = first.voxel_count();
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    float best_p = class_probs[0].data[i];
    for (int c = 1; c < kNumClasses; ++c) {
      float p = class_probs[c].data[i];
      if (p > best_p) {
        best_p = p;
        best = c;
      }
    }
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

namespace {

void check_connectivity(int connectivity) {
  if (connectivity != 6 && connectivity != 26)
    throw std::runtime_error("connectivity must be 6 or 26, got " +
                             std::to_string(connectivity));
}

struct UnionFind {
  std::vector<std::int32_t> parent;

  explicit UnionFind(std::size_t n) : parent(n) {
    for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<std::int32_t>(i);
  }
  std::int32_t find(std::int32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[b < a ? a : b] = b < a ? b : a;
  }
};

}  // namespace

Components connected_components(const Mask& m, int connectivity) {
  check_connectivity(connectivity);
  std::size_t n = m.voxel_count();
  if (n > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()))
    throw std::runtime_error("volume too large for component labeling");

  int nx = m.dims[0], ny = m.dims[1], nz = m.dims[2];

  // Backward half of the neighborhood, in scan order.
  std::vector<std::array<int, 3>> offs;
  if (connectivity == 6) {
    offs = {{-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
  } else {
    for (int dk = -1; dk <= 0; ++dk)
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          bool backward = dk < 0 || (dk == 0 && (dj < 0 || (dj == 0 && di < 0)));
          if (backward) offs.push_back({di, dj, dk});
        }
  }

  UnionFind uf(n);
  std::size_t idx = 0;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i, ++idx) {
        if (!m.data[idx]) continue;
        for (const auto& o : offs) {
          int pi = i + o[0], pj = j + o[1], pk = k + o[2];
          if (pi < 0 || pj < 0 || pk < 0 || pi >= nx || pj >= ny) continue;
          std::size_t pidx = m.index(pi, pj, pk);
          if (m.data[pidx])
            uf.unite(static_cast<std::int32_t>(idx), static_cast<std::int32_t>(pidx));
        }
      }

  Components comps;
  comps.label.assign(n, 0);
  std::vector<std::int32_t> root_id(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!m.data[i]) continue;
    std::int32_t r = uf.find(static_cast<std::int32_t>(i));
    if (root_id[r] == 0) {
      root_id[r] = ++comps.count;
      comps.sizes.push_back(0);
    }
    comps.label[i] = root_id[r];
    ++comps.sizes[root_id[r] - 1];
  }
  return comps;
}

LabelVolume keep_largest_component(const LabelVolume& l, int connectivity) {
  check_connectivity(connectivity);
  LabelVolume out = l;
  for (int cls = 1; cls < kNumClasses; ++cls) {
    Mask m = class_mask(l, cls);
    Components comps = connected_components(m, connectivity);
    if (comps.count <= 1) continue;
    std::int32_t keep = 1;
    for (std::int32_t c = 2; c <= comps.count; ++c)
      if (comps.sizes[c - 1] > comps.sizes[keep - 1]) keep = c;  // ties keep lower id
    for (std::size_t i = 0; i < out.data.size(); ++i)
      if (comps.label[i] != 0 && comps.label[i] != keep) out.data[i] = 0;
  }
  return out;
}

}  // namespace vncseg
