#include "vncseg/volume.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace vncseg {

using json = nlohmann::json;

const std::array<const char*, kNumClasses> kClassNames = {
    "BG", "LV-C", "RV", "LA", "RA", "LV-M", "AA", "PA"};

const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::Int16: return "int16";
    case Dtype::Uint8: return "uint8";
    case Dtype::Float32: return "float32";
  }
  throw std::logic_error("unreachable dtype");
}

Dtype dtype_from_name(const std::string& name) {
  if (name == "int16") return Dtype::Int16;
  if (name == "uint8") return Dtype::Uint8;
  if (name == "float32") return Dtype::Float32;
  throw std::runtime_error("unknown dtype '" + name + "'");
}

std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::Int16: return 2;
    case Dtype::Uint8: return 1;
    case Dtype::Float32: return 4;
  }
  throw std::logic_error("unreachable dtype");
}

Volume make_volume(std::array<int, 3> dims, std::array<double, 3> spacing_mm,
                   std::array<double, 3> origin_mm, Dtype dtype) {
  Volume v;
  v.dims = dims;
  v.spacing_mm = spacing_mm;
  v.origin_mm = origin_mm;
  v.dtype = dtype;
  v.data.assign(v.voxel_count(), 0.0f);
  return v;
}

LabelVolume make_labels(std::array<int, 3> dims, std::array<double, 3> spacing_mm,
                        std::array<double, 3> origin_mm) {
  LabelVolume l;
  l.dims = dims;
  l.spacing_mm = spacing_mm;
  l.origin_mm = origin_mm;
  l.data.assign(l.voxel_count(), 0);
  return l;
}

Mask class_mask(const LabelVolume& labels, int cls) {
  Mask m;
  m.dims = labels.dims;
  m.spacing_mm = labels.spacing_mm;
  m.data.resize(labels.data.size());
  for (std::size_t i = 0; i < labels.data.size(); ++i)
    m.data[i] = labels.data[i] == cls ? 1 : 0;
  return m;
}

namespace {

std::string strip_suffix(const std::string& path) {
  for (const char* suf : {".mvol.json", ".mvol.raw"}) {
    std::size_t n = std::strlen(suf);
    if (path.size() > n && path.compare(path.size() - n, n, suf) == 0)
      return path.substr(0, path.size() - n);
  }
  return path;
}

void require_positive_dims(const Volume& v, const std::string& ctx) {
  for (int d : v.dims)
    if (d <= 0)
      throw std::runtime_error("invalid header field dims in " + ctx +
                               ": entries must be positive");
  for (double s : v.spacing_mm)
    if (!(s > 0.0))
      throw std::runtime_error("invalid header field spacing_mm in " + ctx +
                               ": entries must be positive");
}

void encode_raw(const Volume& v, std::vector<unsigned char>& out) {
  std::size_t n = v.voxel_count();
  out.resize(n * dtype_size(v.dtype));
  switch (v.dtype) {
    case Dtype::Int16:
      for (std::size_t i = 0; i < n; ++i) {
        float f = v.data[i];
        if (std::rint(f) != f || f < -32768.0f || f > 32767.0f)
          throw std::runtime_error("value " + std::to_string(f) +
                                   " not representable as int16 at linear index " +
                                   std::to_string(i));
        auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(f));
        out[2 * i] = static_cast<unsigned char>(u & 0xFF);
        out[2 * i + 1] = static_cast<unsigned char>(u >> 8);
      }
      break;
    case Dtype::Uint8:
      for (std::size_t i = 0; i < n; ++i) {
        float f = v.data[i];
        if (std::rint(f) != f || f < 0.0f || f > 255.0f)
          throw std::runtime_error("value " + std::to_string(f) +
                                   " not representable as uint8 at linear index " +
                                   std::to_string(i));
        out[i] = static_cast<unsigned char>(f);
      }
      break;
    case Dtype::Float32:
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u;
        std::memcpy(&u, &v.data[i], 4);
        out[4 * i] = static_cast<unsigned char>(u & 0xFF);
        out[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xFF);
        out[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xFF);
        out[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xFF);
      }
      break;
  }
}

void decode_raw(const std::vector<unsigned char>& raw, Volume& v) {
  std::size_t n = v.voxel_count();
  v.data.resize(n);
  switch (v.dtype) {
    case Dtype::Int16:
      for (std::size_t i = 0; i < n; ++i) {
        auto u = static_cast<std::uint16_t>(raw[2 * i] |
                                            (static_cast<std::uint16_t>(raw[2 * i + 1]) << 8));
        v.data[i] = static_cast<float>(static_cast<std::int16_t>(u));
      }
      break;
    case Dtype::Uint8:
      for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(raw[i]);
      break;
    case Dtype::Float32:
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u = static_cast<std::uint32_t>(raw[4 * i]) |
                          (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                          (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                          (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
        std::memcpy(&v.data[i], &u, 4);
      }
      break;
  }
}

}  // namespace

void write_volume(const Volume& v, const std::string& path) {
  std::string prefix = strip_suffix(path);
  std::string header_path = prefix + ".mvol.json";
  std::string raw_path = prefix + ".mvol.raw";
  require_positive_dims(v, header_path);
  if (v.data.size() != v.voxel_count())
    throw std::runtime_error("volume data size " + std::to_string(v.data.size()) +
                             " does not match dims of " + header_path);

  std::vector<unsigned char> raw;
  encode_raw(v, raw);

  json j;
  j["magic"] = "MVOL1";
  j["dims"] = v.dims;
  j["spacing_mm"] = v.spacing_mm;
  j["origin_mm"] = v.origin_mm;
  j["dtype"] = dtype_name(v.dtype);

  std::ofstream hf(header_path, std::ios::binary | std::ios::trunc);
  if (!hf) throw std::runtime_error("cannot write " + header_path);
  hf << j.dump(2) << "\n";
  hf.close();
  if (!hf) throw std::runtime_error("cannot write " + header_path);

  std::ofstream rf(raw_path, std::ios::binary | std::ios::trunc);
  if (!rf) throw std::runtime_error("cannot write " + raw_path);
  rf.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
  rf.close();
  if (!rf) throw std::runtime_error("cannot write " + raw_path);
}

Volume read_volume(const std::string& path) {
  std::string prefix = strip_suffix(path);
  std::string header_path = prefix + ".mvol.json";
  std::string raw_path = prefix + ".mvol.raw";

  std::ifstream hf(header_path, std::ios::binary);
  if (!hf) throw std::runtime_error("missing file: " + header_path);
  json j;
  try {
    hf >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid header in " + header_path + ": " + e.what());
  }

  static const std::array<const char*, 5> allowed = {"magic", "dims", "spacing_mm",
                                                     "origin_mm", "dtype"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known)
      throw std::runtime_error("invalid header in " + header_path +
                               ": unexpected key '" + it.key() + "'");
  }

  Volume v;
  try {
    if (j.at("magic").get<std::string>() != "MVOL1")
      throw std::runtime_error("bad magic in " + header_path + " (want MVOL1)");
    j.at("dims").get_to(v.dims);
    j.at("spacing_mm").get_to(v.spacing_mm);
    j.at("origin_mm").get_to(v.origin_mm);
    v.dtype = dtype_from_name(j.at("dtype").get<std::string>());
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid header in " + header_path + ": " + e.what());
  }
  require_positive_dims(v, header_path);

  std::ifstream rf(raw_path, std::ios::binary);
  if (!rf) throw std::runtime_error("missing file: " + raw_path);
  rf.seekg(0, std::ios::end);
  auto file_size = static_cast<std::size_t>(rf.tellg());
  rf.seekg(0, std::ios::beg);
  std::size_t want = v.voxel_count() * dtype_size(v.dtype);
  if (file_size != want)
    throw std::runtime_error("raw size mismatch for " + raw_path + ": header implies " +
                             std::to_string(want) + " bytes, file has " +
                             std::to_string(file_size));
  std::vector<unsigned char> raw(file_size);
  rf.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(file_size));
  if (!rf) throw std::runtime_error("cannot read " + raw_path);

  decode_raw(raw, v);
  return v;
}

Volume labels_as_volume(const LabelVolume& l) {
  Volume v = make_volume(l.dims, l.spacing_mm, l.origin_mm, Dtype::Uint8);
  for (std::size_t i = 0; i < l.data.size(); ++i)
    v.data[i] = static_cast<float>(l.data[i]);
  return v;
}

LabelVolume volume_as_labels(const Volume& v) {
  if (v.dtype != Dtype::Uint8)
    throw std::runtime_error("label volume must have dtype uint8, got " +
                             std::string(dtype_name(v.dtype)));
  LabelVolume l = make_labels(v.dims, v.spacing_mm, v.origin_mm);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    float f = v.data[i];
    if (f < 0.0f || f >= static_cast<float>(kNumClasses) || std::rint(f) != f)
      throw std::runtime_error("label value " + std::to_string(f) +
                               " out of range at linear index " + std::to_string(i));
    l.data[i] = static_cast<std::uint8_t>(f);
  }
  return l;
}

void write_labels(const LabelVolume& l, const std::string& path) {
  write_volume(labels_as_volume(l), path);
}

LabelVolume read_labels(const std::string& path) {
  return volume_as_labels(read_volume(path));
}

}  // namespace vncseg
