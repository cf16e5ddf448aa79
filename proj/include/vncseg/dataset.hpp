#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vncseg/preprocess.hpp"
#include "vncseg/rng.hpp"
#include "vncseg/tensor.hpp"
#include "vncseg/volume.hpp"

namespace vncseg {

struct ManifestEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::string ccta_path, vnc_path, labels_path;  // relative to the manifest
};

void write_dataset_manifest(const std::string& path,
                            const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_dataset_manifest(const std::string& path);

struct CaseData {
  std::string id;
  Volume image;        // preprocessed
  LabelVolume labels;  // resampled to the same grid
};

struct Dataset {
  std::vector<CaseData> cases;

  const CaseData& find(const std::string& id) const;
};

// Loads the low-contrast image and shared labels for the given ids and runs
// both through preprocessing.
Dataset load_cases(const std::string& manifest_path, const std::vector<std::string>& ids,
                   const PreprocessConfig& cfg);

struct Batch {
  Tensor<float> input;   // (B, slab_depth, H, W)
  Tensor<float> target;  // (B, n_classes, H, W) one-hot
};

Tensor<float> one_hot_slice(const LabelVolume& labels, int z, int n_classes);

// Uniformly samples (case, slice) pairs; two draws per sample in that order.
Batch sample_batch(const Dataset& ds, int batch_size, int slab_depth, Rng& rng);

}  // namespace vncseg
