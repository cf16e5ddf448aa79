#include "vncseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace vncseg {

using json = nlohmann::json;

namespace {

void check_same_grid(const Mask& a, const Mask& b) {
  if (a.dims != b.dims || a.spacing_mm != b.spacing_mm)
    throw std::runtime_error("masks are on different grids");
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D lower envelope of parabolas (x - p_q)^2 + f(q) sampled at the same
// positions, with physical coordinates p_i = i * h. Exact squared distances.
void edt_pass(std::vector<double>& f, std::vector<double>& out, std::vector<int>& v,
              std::vector<double>& z, int n, double h) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double pq = q * h;
    while (k >= 0) {
      double pv = v[k] * h;
      double s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    } else {
      double pv = v[k] * h;
      double s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kInf;
    }
  }
  if (k < 0) {
    for (int i = 0; i < n; ++i) out[i] = kInf;
    return;
  }
  int j = 0;
  for (int i = 0; i < n; ++i) {
    double p = i * h;
    while (z[j + 1] < p) ++j;
    double d = p - v[j] * h;
    out[i] = d * d + f[v[j]];
  }
}

// Exact squared Euclidean distance, in mm^2, from every voxel center to the
// nearest marked voxel center.
std::vector<double> squared_edt(const std::array<int, 3>& dims,
                                const std::array<double, 3>& spacing,
                                const std::vector<std::uint8_t>& marked) {
  int nx = dims[0], ny = dims[1], nz = dims[2];
  std::size_t n = static_cast<std::size_t>(nx) * ny * nz;
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = marked[i] ? 0.0 : kInf;

  int nmax = std::max(nx, std::max(ny, nz));
  std::vector<double> f(nmax), out(nmax), z(nmax + 1);
  std::vector<int> v(nmax);

  // x lines
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j) {
      std::size_t base = static_cast<std::size_t>(nx) * (j + static_cast<std::size_t>(ny) * k);
      for (int i = 0; i < nx; ++i) f[i] = dist[base + i];
      edt_pass(f, out, v, z, nx, spacing[0]);
      for (int i = 0; i < nx; ++i) dist[base + i] = out[i];
    }
  // y lines
  for (int k = 0; k < nz; ++k)
    for (int i = 0; i < nx; ++i) {
      std::size_t base = i + static_cast<std::size_t>(nx) * ny * k;
      for (int j = 0; j < ny; ++j) f[j] = dist[base + static_cast<std::size_t>(nx) * j];
      edt_pass(f, out, v, z, ny, spacing[1]);
      for (int j = 0; j < ny; ++j) dist[base + static_cast<std::size_t>(nx) * j] = out[j];
    }
  // z lines
  std::size_t plane = static_cast<std::size_t>(nx) * ny;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      std::size_t base = i + static_cast<std::size_t>(nx) * j;
      for (int k = 0; k < nz; ++k) f[k] = dist[base + plane * k];
      edt_pass(f, out, v, z, nz, spacing[2]);
      for (int k = 0; k < nz; ++k) dist[base + plane * k] = out[k];
    }
  return dist;
}

}  // namespace

double dice_coefficient(const Mask& a, const Mask& b) {
  check_same_grid(a, b);
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    bool fa = a.data[i] != 0, fb = b.data[i] != 0;
    na += fa;
    nb += fb;
    inter += fa && fb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<std::array<int, 3>> surface_voxels(const Mask& m) {
  std::vector<std::array<int, 3>> out;
  int nx = m.dims[0], ny = m.dims[1], nz = m.dims[2];
  auto bg = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i >= nx || j >= ny || k >= nz) return true;
    return m.data[m.index(i, j, k)] == 0;
  };
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        if (!m.data[m.index(i, j, k)]) continue;
        if (bg(i - 1, j, k) || bg(i + 1, j, k) || bg(i, j - 1, k) || bg(i, j + 1, k) ||
            bg(i, j, k - 1) || bg(i, j, k + 1))
          out.push_back({i, j, k});
      }
  return out;
}

std::optional<double> assd_mm(const Mask& a, const Mask& b) {
  check_same_grid(a, b);
  auto sa = surface_voxels(a);
  auto sb = surface_voxels(b);
  if (sa.empty() || sb.empty()) return std::nullopt;

  auto mark = [&](const std::vector<std::array<int, 3>>& s) {
    std::vector<std::uint8_t> m(a.voxel_count(), 0);
    for (const auto& p : s) m[a.index(p[0], p[1], p[2])] = 1;
    return m;
  };
  std::vector<double> to_b = squared_edt(a.dims, a.spacing_mm, mark(sb));
  std::vector<double> to_a = squared_edt(a.dims, a.spacing_mm, mark(sa));

  double sum = 0.0;
  for (const auto& p : sa) sum += std::sqrt(to_b[a.index(p[0], p[1], p[2])]);
  for (const auto& p : sb) sum += std::sqrt(to_a[a.index(p[0], p[1], p[2])]);
  return sum / static_cast<double>(sa.size() + sb.size());
}

std::array<double, kNumClasses> structure_volumes_ml(const LabelVolume& l) {
  double voxel_ml = l.spacing_mm[0] * l.spacing_mm[1] * l.spacing_mm[2] / 1000.0;
  std::array<std::int64_t, kNumClasses> counts{};
  for (std::uint8_t v : l.data) ++counts[v];
  std::array<double, kNumClasses> out;
  for (int c = 0; c < kNumClasses; ++c) out[c] = counts[c] * voxel_ml;
  return out;
}

CaseMetrics evaluate_case(const LabelVolume& pred, const LabelVolume& ref) {
  if (pred.dims != ref.dims || pred.spacing_mm != ref.spacing_mm)
    throw std::runtime_error("prediction and reference are on different grids");
  CaseMetrics m;
  for (int c = 0; c < kNumClasses; ++c) {
    Mask mp = class_mask(pred, c);
    Mask mr = class_mask(ref, c);
    m.dice[c] = dice_coefficient(mp, mr);
    m.assd[c] = assd_mm(mp, mr);
  }
  m.pred_volume_ml = structure_volumes_ml(pred);
  m.ref_volume_ml = structure_volumes_ml(ref);
  return m;
}

double mean_foreground_dice(const CaseMetrics& m) {
  double sum = 0.0;
  for (int c = 1; c < kNumClasses; ++c) sum += m.dice[c];
  return sum / (kNumClasses - 1);
}

namespace {

ClassStats stats_of(const std::vector<double>& xs) {
  ClassStats s;
  s.n = static_cast<int>(xs.size());
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / s.n;
  if (s.n >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / (s.n - 1));
  }
  return s;
}

}  // namespace

Report aggregate_cases(const std::vector<CaseMetrics>& cases) {
  Report r;
  r.n_cases = static_cast<int>(cases.size());
  double fg_sum = 0.0;
  double assd_sum = 0.0;
  int assd_n = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<double> d, a, v;
    for (const auto& m : cases) {
      d.push_back(m.dice[c]);
      v.push_back(m.pred_volume_ml[c]);
      if (m.assd[c]) a.push_back(*m.assd[c]);
    }
    r.dsc[c] = stats_of(d);
    r.assd[c] = stats_of(a);
    r.pred_volume_ml[c] = stats_of(v);
    if (c >= 1) {
      for (double x : a) assd_sum += x;
      assd_n += static_cast<int>(a.size());
      r.assd_undefined += r.n_cases - static_cast<int>(a.size());
    }
  }
  for (const auto& m : cases) fg_sum += mean_foreground_dice(m);
  r.mean_fg_dice = r.n_cases ? fg_sum / r.n_cases : 0.0;
  r.mean_assd_mm = assd_n ? assd_sum / assd_n : 0.0;
  return r;
}

namespace {

// Structures in display order.
const std::array<int, 7> kTableOrder = {1, 5, 2, 3, 4, 6, 7};

std::string cell(const ClassStats& s, int total) {
  char buf[64];
  if (s.n == 0) {
    std::snprintf(buf, sizeof(buf), "%11s", "n/a");
  } else if (s.n < total) {
    std::snprintf(buf, sizeof(buf), "%.3f±%.3f*", s.mean, s.sd);
  } else {
    std::snprintf(buf, sizeof(buf), "%.3f±%.3f", s.mean, s.sd);
  }
  char padded[80];
  std::snprintf(padded, sizeof(padded), " %12s", buf);
  return padded;
}

}  // namespace

std::string format_report_table(const Report& r) {
  std::string out = "cases: " + std::to_string(r.n_cases) + "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-9s", "");
  out += buf;
  for (int c : kTableOrder) {
    std::snprintf(buf, sizeof(buf), " %12s", kClassNames[c]);
    out += buf;
  }
  out += "\n";
  std::snprintf(buf, sizeof(buf), "%-9s", "DSC");
  out += buf;
  for (int c : kTableOrder) out += cell(r.dsc[c], r.n_cases);
  out += "\n";
  std::snprintf(buf, sizeof(buf), "%-9s", "ASSD(mm)");
  out += buf;
  for (int c : kTableOrder) out += cell(r.assd[c], r.n_cases);
  out += "\n";
  if (r.assd_undefined > 0)
    out += "* computed over defined cases only; " + std::to_string(r.assd_undefined) +
           " surface distances undefined\n";
  return out;
}

std::string report_to_json_string(const Report& r, const std::vector<CaseMetrics>& cases) {
  auto stats_json = [](const ClassStats& s) {
    return json{{"n", s.n}, {"mean", s.mean}, {"sd", s.sd}};
  };
  json per_class;
  for (int c = 0; c < kNumClasses; ++c)
    per_class[kClassNames[c]] = json{{"dsc", stats_json(r.dsc[c])},
                                     {"assd_mm", stats_json(r.assd[c])},
                                     {"pred_volume_ml", stats_json(r.pred_volume_ml[c])}};
  json per_case = json::array();
  for (const auto& m : cases) {
    json jc;
    jc["id"] = m.id;
    for (int c = 0; c < kNumClasses; ++c) {
      json e;
      e["dsc"] = m.dice[c];
      if (m.assd[c])
        e["assd_mm"] = *m.assd[c];
      else
        e["assd_mm"] = nullptr;
      e["pred_volume_ml"] = m.pred_volume_ml[c];
      e["ref_volume_ml"] = m.ref_volume_ml[c];
      jc["classes"][kClassNames[c]] = e;
    }
    per_case.push_back(jc);
  }
  json j{{"n_cases", r.n_cases},
         {"mean_foreground_dice", r.mean_fg_dice},
         {"mean_assd_mm", r.mean_assd_mm},
         {"assd_undefined", r.assd_undefined},
         {"classes", per_class},
         {"cases", per_case}};
  return j.dump(2);
}

}  // namespace vncseg
