#include "vncseg/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "vncseg/postprocess.hpp"
#include "vncseg/rng.hpp"

namespace vncseg {

namespace fs = std::filesystem;

void PhantomSpec::validate() const {
  if (size < 32) throw std::runtime_error("phantom size must be >= 32");
  if (!(spacing_mm > 0.0)) throw std::runtime_error("phantom spacing must be positive");
  if (noise_sd_hu < 0.0) throw std::runtime_error("noise sd must be >= 0");
}

namespace {

constexpr std::uint64_t kGeoTag = 0x6E0;
constexpr std::uint64_t kContrastTag = 0xCC7A;
constexpr std::uint64_t kNonContrastTag = 0x09C;

struct Vec3 {
  double x, y, z;
};

struct Ellipsoid {
  Vec3 c, semi;
  bool contains(double x, double y, double z) const {
    double dx = (x - c.x) / semi.x, dy = (y - c.y) / semi.y, dz = (z - c.z) / semi.z;
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

struct CylinderZ {
  double cx, cy, cz, r, half_len;
  bool contains(double x, double y, double z) const {
    double dx = (x - cx) / r, dy = (y - cy) / r;
    return dx * dx + dy * dy <= 1.0 && std::abs(z - cz) <= half_len;
  }
};

// All lengths as fractions of the volume size; layout chosen so the worst
// case jitter and scaling keep a 2 voxel border and the structures stay
// single connected pieces.
struct Geometry {
  Ellipsoid lv_cavity, lv_outer, rv, rv_excl, la, ra;
  CylinderZ aa, pa;
};

// The two atria share the blood-pool intensity, so they must stay apart
// from the ventricles and tell themselves apart by shape: the right one is
// wide and flat, the left one narrow and tall.
Geometry sample_geometry(const PhantomSpec& spec, Rng& rng) {
  double sz = spec.size;
  double jit = 0.035 * sz;
  Vec3 c = {0.5 * sz + rng.uniform(-jit, jit), 0.5 * sz + rng.uniform(-jit, jit),
            0.5 * sz + rng.uniform(-jit, jit)};
  double g = rng.uniform(0.88, 1.12);
  double s_lv = rng.uniform(0.92, 1.08);
  double r_cav = rng.uniform(0.62, 0.70);
  double s_rv = rng.uniform(0.92, 1.08);
  double s_la = rng.uniform(0.92, 1.08);
  double s_ra = rng.uniform(0.92, 1.08);
  double s_aa = rng.uniform(0.92, 1.08);
  double s_pa = rng.uniform(0.92, 1.08);

  Geometry geo;
  double u = sz * g;
  geo.lv_outer = {{c.x, c.y, c.z},
                  {0.18 * u * s_lv, 0.18 * u * s_lv, 0.295 * u * s_lv}};
  geo.lv_cavity = {{c.x, c.y, c.z},
                   {geo.lv_outer.semi.x * r_cav, geo.lv_outer.semi.y * r_cav,
                    geo.lv_outer.semi.z * r_cav}};
  geo.rv = {{c.x - 0.225 * u, c.y - 0.07 * u, c.z},
            {0.150 * u * s_rv, 0.150 * u * s_rv, 0.255 * u * s_rv}};
  geo.rv_excl = {{c.x, c.y, c.z},
                 {geo.lv_outer.semi.x * 1.15, geo.lv_outer.semi.y * 1.15,
                  geo.lv_outer.semi.z * 1.15}};
  geo.la = {{c.x + 0.22 * u, c.y + 0.21 * u, c.z},
            {0.085 * u * s_la, 0.085 * u * s_la, 0.185 * u * s_la}};
  geo.ra = {{c.x - 0.21 * u, c.y + 0.22 * u, c.z + 0.03 * u},
            {0.125 * u * s_ra, 0.105 * u * s_ra, 0.165 * u * s_ra}};
  geo.aa = {c.x, c.y + 0.24 * u, c.z, 0.072 * u * s_aa, 0.30 * u};
  geo.pa = {c.x - 0.03 * u, c.y - 0.25 * u, c.z, 0.062 * u * s_pa, 0.285 * u};
  return geo;
}

int classify(const Geometry& geo, double x, double y, double z) {
  if (geo.lv_cavity.contains(x, y, z)) return 1;
  if (geo.rv.contains(x, y, z) && !geo.rv_excl.contains(x, y, z)) return 2;
  if (geo.la.contains(x, y, z)) return 3;
  if (geo.ra.contains(x, y, z)) return 4;
  if (geo.lv_outer.contains(x, y, z)) return 5;  // shell: cavity claimed above
  if (geo.aa.contains(x, y, z)) return 6;
  if (geo.pa.contains(x, y, z)) return 7;
  return 0;
}

void verify_labels(const LabelVolume& labels, std::uint64_t seed) {
  int n = labels.dims[0];
  std::array<bool, kNumClasses> present{};
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        std::uint8_t c = labels.at(i, j, k);
        present[c] = true;
        if (c != 0 && (i < 2 || j < 2 || k < 2 || i >= n - 2 || j >= n - 2 || k >= n - 2))
          throw std::logic_error("phantom seed " + std::to_string(seed) +
                                 " violates the border margin");
      }
  for (int c = 0; c < kNumClasses; ++c)
    if (!present[c])
      throw std::logic_error("phantom seed " + std::to_string(seed) + " lacks class " +
                             std::to_string(c));
  for (int c = 1; c < kNumClasses; ++c) {
    Components comps = connected_components(class_mask(labels, c), 26);
    if (comps.count != 1)
      throw std::logic_error("phantom seed " + std::to_string(seed) + " splits class " +
                             std::to_string(c) + " into " +
                             std::to_string(comps.count) + " pieces");
  }
}

Volume render_domain(const LabelVolume& labels,
                     const std::array<double, kNumClasses>& means, double noise_sd,
                     std::uint64_t stream_seed) {
  Volume v = make_volume(labels.dims, labels.spacing_mm, labels.origin_mm, Dtype::Int16);
  Rng rng(stream_seed);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    double hu = means[labels.data[i]] + rng.normal(0.0, noise_sd);
    long q = std::lround(hu);
    v.data[i] = static_cast<float>(std::clamp(q, -32768l, 32767l));
  }
  return v;
}

}  // namespace

PhantomCase generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng geo_rng(mix_seed(spec.seed, kGeoTag));
  Geometry geo = sample_geometry(spec, geo_rng);

  std::array<int, 3> dims = {spec.size, spec.size, spec.size};
  std::array<double, 3> spacing = {spec.spacing_mm, spec.spacing_mm, spec.spacing_mm};
  PhantomCase out;
  out.labels = make_labels(dims, spacing, {0.0, 0.0, 0.0});
  for (int k = 0; k < spec.size; ++k)
    for (int j = 0; j < spec.size; ++j)
      for (int i = 0; i < spec.size; ++i)
        out.labels.at(i, j, k) =
            static_cast<std::uint8_t>(classify(geo, i, j, k));

  verify_labels(out.labels, spec.seed);

  out.contrast = render_domain(out.labels, spec.contrast_hu, spec.noise_sd_hu,
                               mix_seed(spec.seed, kContrastTag));
  out.noncontrast = render_domain(out.labels, spec.noncontrast_hu, spec.noise_sd_hu,
                                  mix_seed(spec.seed, kNonContrastTag));
  return out;
}

std::vector<ManifestEntry> generate_phantom_dataset(int count, const PhantomSpec& spec,
                                                    const std::string& out_dir) {
  if (count < 1) throw std::runtime_error("case count must be >= 1");
  spec.validate();
  fs::create_directories(out_dir);

  std::vector<ManifestEntry> entries;
  for (int idx = 0; idx < count; ++idx) {
    PhantomSpec s = spec;
    s.seed = spec.seed + static_cast<std::uint64_t>(idx);
    PhantomCase c = generate_phantom(s);

    char id[32];
    std::snprintf(id, sizeof(id), "phantom_%03d", idx);
    ManifestEntry e;
    e.id = id;
    e.seed = s.seed;
    e.ccta_path = std::string(id) + "_ccta.mvol.json";
    e.vnc_path = std::string(id) + "_vnc.mvol.json";
    e.labels_path = std::string(id) + "_labels.mvol.json";
    write_volume(c.contrast, (fs::path(out_dir) / e.ccta_path).string());
    write_volume(c.noncontrast, (fs::path(out_dir) / e.vnc_path).string());
    write_labels(c.labels, (fs::path(out_dir) / e.labels_path).string());
    entries.push_back(std::move(e));
  }
  write_dataset_manifest((fs::path(out_dir) / "manifest.json").string(), entries);
  return entries;
}

}  // namespace vncseg
