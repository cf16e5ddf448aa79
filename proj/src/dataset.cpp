#include "vncseg/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace vncseg {

using json = nlohmann::json;
namespace fs = std::filesystem;

void write_dataset_manifest(const std::string& path,
                            const std::vector<ManifestEntry>& entries) {
  json cases = json::array();
  for (const auto& e : entries)
    cases.push_back(json{{"id", e.id},
                         {"seed", e.seed},
                         {"ccta_path", e.ccta_path},
                         {"vnc_path", e.vnc_path},
                         {"labels_path", e.labels_path}});
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << json{{"cases", cases}}.dump(2) << "\n";
}

std::vector<ManifestEntry> read_dataset_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path);
  json j;
  try {
    in >> j;
    std::vector<ManifestEntry> entries;
    for (const auto& c : j.at("cases")) {
      ManifestEntry e;
      c.at("id").get_to(e.id);
      c.at("seed").get_to(e.seed);
      c.at("ccta_path").get_to(e.ccta_path);
      c.at("vnc_path").get_to(e.vnc_path);
      c.at("labels_path").get_to(e.labels_path);
      entries.push_back(std::move(e));
    }
    return entries;
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid dataset manifest " + path + ": " + e.what());
  }
}

const CaseData& Dataset::find(const std::string& id) const {
  for (const auto& c : cases)
    if (c.id == id) return c;
  throw std::runtime_error("case '" + id + "' not in dataset");
}

Dataset load_cases(const std::string& manifest_path, const std::vector<std::string>& ids,
                   const PreprocessConfig& cfg) {
  auto entries = read_dataset_manifest(manifest_path);
  fs::path dir = fs::path(manifest_path).parent_path();

  Dataset ds;
  for (const auto& id : ids) {
    const ManifestEntry* entry = nullptr;
    for (const auto& e : entries)
      if (e.id == id) entry = &e;
    if (!entry)
      throw std::runtime_error("case '" + id + "' not in manifest " + manifest_path);

    CaseData c;
    c.id = id;
    Volume image = read_volume((dir / entry->vnc_path).string());
    LabelVolume labels = read_labels((dir / entry->labels_path).string());
    if (image.dims != labels.dims || image.spacing_mm != labels.spacing_mm ||
        image.origin_mm != labels.origin_mm)
      throw std::runtime_error("image and labels of case '" + id +
                               "' are on different grids");
    c.image = preprocess_image(image, cfg);
    c.labels = preprocess_labels(labels, cfg);
    if (c.image.dims != c.labels.dims)
      throw std::runtime_error("preprocessing produced mismatched grids for case '" +
                               id + "'");
    ds.cases.push_back(std::move(c));
  }
  return ds;
}

Tensor<float> one_hot_slice(const LabelVolume& labels, int z, int n_classes) {
  if (z < 0 || z >= labels.dims[2])
    throw std::runtime_error("slice " + std::to_string(z) + " outside volume with " +
                             std::to_string(labels.dims[2]) + " slices");
  int nx = labels.dims[0], ny = labels.dims[1];
  Tensor<float> out({n_classes, ny, nx});
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      int cls = labels.at(i, j, z);
      if (cls >= n_classes)
        throw std::runtime_error("label " + std::to_string(cls) + " exceeds class count");
      out(cls, j, i) = 1.0f;
    }
  return out;
}

Batch sample_batch(const Dataset& ds, int batch_size, int slab_depth, Rng& rng) {
  if (ds.cases.empty()) throw std::runtime_error("cannot sample from an empty dataset");
  if (batch_size < 1) throw std::runtime_error("batch size must be >= 1");

  Batch batch;
  for (int b = 0; b < batch_size; ++b) {
    const CaseData& c = ds.cases[rng.below(ds.cases.size())];
    int z = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.image.dims[2])));
    Tensor<float> slab = extract_slab(c.image, z, slab_depth);
    Tensor<float> target = one_hot_slice(c.labels, z, kNumClasses);

    int ny = c.image.dims[1], nx = c.image.dims[0];
    if (b == 0) {
      batch.input = Tensor<float>({batch_size, slab_depth, ny, nx});
      batch.target = Tensor<float>({batch_size, kNumClasses, ny, nx});
    } else if (ny != batch.input.shape[2] || nx != batch.input.shape[3]) {
      throw std::runtime_error("cases in a batch must share in-plane dims, got " +
                               std::to_string(nx) + "x" + std::to_string(ny) + " vs " +
                               std::to_string(batch.input.shape[3]) + "x" +
                               std::to_string(batch.input.shape[2]));
    }
    std::copy(slab.data.begin(), slab.data.end(),
              batch.input.data.begin() + static_cast<std::size_t>(b) * slab.data.size());
    std::copy(target.data.begin(), target.data.end(),
              batch.target.data.begin() +
                  static_cast<std::size_t>(b) * target.data.size());
  }
  return batch;
}

}  // namespace vncseg
