#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vncseg/volume.hpp"

namespace vncseg {

// 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty, 0.0 when exactly one is.
double dice_coefficient(const Mask& a, const Mask& b);

// Foreground voxels with at least one of their six face neighbors background;
// outside the volume counts as background.
std::vector<std::array<int, 3>> surface_voxels(const Mask& m);

// Average symmetric surface distance over voxel centers, in mm. Undefined
// (nullopt) when either mask is empty.
std::optional<double> assd_mm(const Mask& a, const Mask& b);

// Per-class voxel count times voxel volume, reported in mL.
std::array<double, kNumClasses> structure_volumes_ml(const LabelVolume& l);

struct CaseMetrics {
  std::string id;
  std::array<double, kNumClasses> dice{};
  std::array<std::optional<double>, kNumClasses> assd;
  std::array<double, kNumClasses> pred_volume_ml{};
  std::array<double, kNumClasses> ref_volume_ml{};
};

CaseMetrics evaluate_case(const LabelVolume& pred, const LabelVolume& ref);

// Mean Dice over the seven foreground classes.
double mean_foreground_dice(const CaseMetrics& m);

struct ClassStats {
  int n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n-1); 0 when n < 2
};

struct Report {
  int n_cases = 0;
  std::array<ClassStats, kNumClasses> dsc;
  std::array<ClassStats, kNumClasses> assd;  // n counts defined values only
  std::array<ClassStats, kNumClasses> pred_volume_ml;
  double mean_fg_dice = 0.0;      // mean over cases of the per-case fg mean
  double mean_assd_mm = 0.0;      // mean over all defined fg class/case pairs
  int assd_undefined = 0;         // fg class/case pairs without a value
};

Report aggregate_cases(const std::vector<CaseMetrics>& cases);

// Two-row table (DSC, ASSD) with one column per structure.
std::string format_report_table(const Report& r);
std::string report_to_json_string(const Report& r, const std::vector<CaseMetrics>& cases);

}  // namespace vncseg
