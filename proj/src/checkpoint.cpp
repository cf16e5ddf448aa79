#include "vncseg/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace vncseg {

using json = nlohmann::json;

namespace {

std::string strip_ckpt_suffix(const std::string& path) {
  for (const char* suf : {".ckpt.json", ".ckpt.raw"}) {
    std::size_t n = std::strlen(suf);
    if (path.size() > n && path.compare(path.size() - n, n, suf) == 0)
      return path.substr(0, path.size() - n);
  }
  return path;
}

void append_f32_le(std::vector<unsigned char>& blob, const float* p, std::size_t n) {
  std::size_t at = blob.size();
  blob.resize(at + 4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u;
    std::memcpy(&u, p + i, 4);
    blob[at + 4 * i] = static_cast<unsigned char>(u & 0xFF);
    blob[at + 4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xFF);
    blob[at + 4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xFF);
    blob[at + 4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xFF);
  }
}

void read_f32_le(const std::vector<unsigned char>& blob, std::size_t offset, float* p,
                 std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t at = offset + 4 * i;
    std::uint32_t u = static_cast<std::uint32_t>(blob[at]) |
                      (static_cast<std::uint32_t>(blob[at + 1]) << 8) |
                      (static_cast<std::uint32_t>(blob[at + 2]) << 16) |
                      (static_cast<std::uint32_t>(blob[at + 3]) << 24);
    std::memcpy(p + i, &u, 4);
  }
}

json config_to_json(const NetworkConfig& c) {
  return json{{"in_channels", c.in_channels},   {"n_classes", c.n_classes},
              {"base_channels", c.base_channels}, {"n_down", c.n_down},
              {"n_up", c.n_up},                 {"n_res_blocks", c.n_res_blocks}};
}

NetworkConfig config_from_json(const json& j, const std::string& ctx) {
  static const std::array<const char*, 6> fields = {
      "in_channels", "n_classes", "base_channels", "n_down", "n_up", "n_res_blocks"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* f : fields) known = known || it.key() == f;
    if (!known)
      throw std::runtime_error("unknown field '" + it.key() + "' in checkpoint config of " +
                               ctx);
  }
  NetworkConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.n_down = j.at("n_down").get<int>();
    c.n_up = j.at("n_up").get<int>();
    c.n_res_blocks = j.at("n_res_blocks").get<int>();
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid checkpoint config in " + ctx + ": " + e.what());
  }
  return c;
}

struct TensorEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset;
  std::size_t numel;
};

}  // namespace

void save_checkpoint(Network<float>& net, const std::string& path, const TrainState* ts) {
  std::string prefix = strip_ckpt_suffix(path);
  std::string json_path = prefix + ".ckpt.json";
  std::string raw_path = prefix + ".ckpt.raw";

  auto params = net.parameters();
  auto states = net.state();

  std::vector<unsigned char> blob;
  json tensors = json::array();
  auto add = [&](const std::string& name, const Tensor<float>& t, int rank) {
    std::vector<int> shape(t.shape.begin(), t.shape.begin() + rank);
    tensors.push_back(json{{"name", name}, {"shape", shape}, {"offset", blob.size()}});
    append_f32_le(blob, t.data.data(), t.data.size());
  };
  for (auto& p : params) add(p.name, *p.value, p.value->rank);
  for (auto& s : states) add(s.name, *s.value, s.value->rank);

  json j;
  j["magic"] = "VNCKPT1";
  j["config"] = config_to_json(net.config());
  if (ts) {
    j["iteration"] = ts->iteration;
    j["best_val_dice"] = ts->best_val_dice;
    if (ts->has_adam) {
      if (ts->adam.m.size() != params.size())
        throw std::runtime_error("optimizer state does not match model parameters");
      j["adam_t"] = ts->adam.t;
      for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<int> shape(params[i].value->shape.begin(),
                               params[i].value->shape.begin() + params[i].value->rank);
        tensors.push_back(json{{"name", "adam.m." + params[i].name},
                               {"shape", shape},
                               {"offset", blob.size()}});
        append_f32_le(blob, ts->adam.m[i].data(), ts->adam.m[i].size());
        tensors.push_back(json{{"name", "adam.v." + params[i].name},
                               {"shape", shape},
                               {"offset", blob.size()}});
        append_f32_le(blob, ts->adam.v[i].data(), ts->adam.v[i].size());
      }
    }
  }
  j["tensors"] = tensors;
  j["blob_bytes"] = blob.size();

  std::ofstream jf(json_path, std::ios::binary | std::ios::trunc);
  if (!jf) throw std::runtime_error("cannot write " + json_path);
  jf << j.dump(2) << "\n";
  jf.close();
  if (!jf) throw std::runtime_error("cannot write " + json_path);

  std::ofstream rf(raw_path, std::ios::binary | std::ios::trunc);
  if (!rf) throw std::runtime_error("cannot write " + raw_path);
  rf.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size()));
  rf.close();
  if (!rf) throw std::runtime_error("cannot write " + raw_path);
}

std::unique_ptr<Network<float>> load_checkpoint(const std::string& path, TrainState* ts) {
  std::string prefix = strip_ckpt_suffix(path);
  std::string json_path = prefix + ".ckpt.json";
  std::string raw_path = prefix + ".ckpt.raw";

  std::ifstream jf(json_path, std::ios::binary);
  if (!jf) throw std::runtime_error("missing file: " + json_path);
  json j;
  try {
    jf >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid checkpoint manifest " + json_path + ": " + e.what());
  }

  if (!j.contains("magic") || j["magic"] != "VNCKPT1")
    throw std::runtime_error("bad magic in " + json_path + " (want VNCKPT1)");
  NetworkConfig cfg = config_from_json(j.at("config"), json_path);

  std::map<std::string, TensorEntry> directory;
  std::size_t blob_bytes;
  try {
    blob_bytes = j.at("blob_bytes").get<std::size_t>();
    for (const auto& t : j.at("tensors")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<std::vector<int>>();
      e.offset = t.at("offset").get<std::size_t>();
      e.numel = 1;
      for (int d : e.shape) e.numel *= static_cast<std::size_t>(d);
      if (directory.count(e.name))
        throw std::runtime_error("duplicate tensor '" + e.name + "' in " + json_path);
      directory[e.name] = e;
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid checkpoint manifest " + json_path + ": " + e.what());
  }

  std::ifstream rf(raw_path, std::ios::binary);
  if (!rf) throw std::runtime_error("missing file: " + raw_path);
  rf.seekg(0, std::ios::end);
  auto file_size = static_cast<std::size_t>(rf.tellg());
  rf.seekg(0, std::ios::beg);
  if (file_size != blob_bytes)
    throw std::runtime_error("raw size mismatch for " + raw_path + ": manifest implies " +
                             std::to_string(blob_bytes) + " bytes, file has " +
                             std::to_string(file_size));
  std::vector<unsigned char> blob(file_size);
  rf.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(file_size));
  if (!rf) throw std::runtime_error("cannot read " + raw_path);

  auto fetch = [&](const std::string& name, float* dst, const Tensor<float>& like) {
    auto it = directory.find(name);
    if (it == directory.end())
      throw std::runtime_error("tensor '" + name + "' missing from " + json_path);
    const TensorEntry& e = it->second;
    if (e.numel != like.data.size())
      throw std::runtime_error("tensor '" + name + "' in " + json_path + " has " +
                               std::to_string(e.numel) + " values, model wants " +
                               std::to_string(like.data.size()));
    if (e.offset + 4 * e.numel > blob.size())
      throw std::runtime_error("tensor '" + name + "' overruns blob in " + raw_path);
    read_f32_le(blob, e.offset, dst, e.numel);
  };

  auto net = std::make_unique<Network<float>>(cfg);
  auto params = net->parameters();
  auto states = net->state();
  for (auto& p : params) fetch(p.name, p.value->data.data(), *p.value);
  for (auto& s : states) fetch(s.name, s.value->data.data(), *s.value);

  if (ts) {
    ts->iteration = j.value("iteration", 0);
    ts->best_val_dice = j.value("best_val_dice", -1.0);
    ts->has_adam = j.contains("adam_t");
    if (ts->has_adam) {
      ts->adam = AdamState<float>::like(params);
      ts->adam.t = j["adam_t"].get<long>();
      for (std::size_t i = 0; i < params.size(); ++i) {
        fetch("adam.m." + params[i].name, ts->adam.m[i].data(), *params[i].value);
        fetch("adam.v." + params[i].name, ts->adam.v[i].data(), *params[i].value);
      }
    }
  }
  return net;
}

}  // namespace vncseg
