#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vitc/optimizer.hpp"
#include "vitc/plan.hpp"
#include "vitc/vit.hpp"

// Self-describing checkpoint container. Byte layout, all integers and floats
// little-endian:
//   magic   8 bytes  "VITCKPT\n"
//   version u32      (currently 1)
//   json    u64 length + UTF-8 bytes (config header: model geometry, block
//                    structure, precision, kind, optimizer extras)
//   count   u64      number of arrays
//   per array: u32 name length, name bytes, u32 ndim, u64 dims[ndim],
//              u8 scalar width (4 or 8), raw data at that width
// Weights are written at the declared precision (32- or 64-bit floats);
// optimizer variables are always 64-bit.

namespace vitc {

inline constexpr char kCheckpointMagic[8] = {'V', 'I', 'T', 'C', 'K', 'P', 'T', '\n'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::vector<int64_t> shape;
  std::vector<double> data;
  int width = 8;  // bytes per scalar on disk
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, NamedArray>> arrays;  // ordered

  const NamedArray& find(const std::string& name) const {
    for (const auto& [n, a] : arrays)
      if (n == name) return a;
    throw std::runtime_error("checkpoint: missing array '" + name + "'");
  }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

namespace detail {

inline void check_little_endian() {
  const uint32_t probe = 1;
  if (*reinterpret_cast<const unsigned char*>(&probe) != 1)
    throw std::runtime_error("checkpoint: big-endian hosts are unsupported");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void Checkpoint::save(const std::string& path) const {
  detail::check_little_endian();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kCheckpointMagic, 8);
  detail::write_pod<uint32_t>(os, kCheckpointVersion);
  std::string j = meta.dump();
  detail::write_pod<uint64_t>(os, j.size());
  os.write(j.data(), static_cast<std::streamsize>(j.size()));
  detail::write_pod<uint64_t>(os, arrays.size());
  for (const auto& [name, arr] : arrays) {
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(arr.shape.size()));
    for (int64_t d : arr.shape) detail::write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    detail::write_pod<uint8_t>(os, static_cast<uint8_t>(arr.width));
    if (arr.width == 4) {
      for (double v : arr.data) detail::write_pod<float>(os, static_cast<float>(v));
    } else if (arr.width == 8) {
      for (double v : arr.data) detail::write_pod<double>(os, v);
    } else {
      throw std::runtime_error("checkpoint: unsupported scalar width");
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline Checkpoint Checkpoint::load(const std::string& path) {
  detail::check_little_endian();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version " + std::to_string(version) +
                             " does not match supported version " + std::to_string(kCheckpointVersion) +
                             "; no migration path");
  uint64_t jlen = detail::read_pod<uint64_t>(is);
  std::string j(jlen, '\0');
  is.read(j.data(), static_cast<std::streamsize>(jlen));
  Checkpoint c;
  c.meta = nlohmann::json::parse(j);
  uint64_t count = detail::read_pod<uint64_t>(is);
  for (uint64_t k = 0; k < count; ++k) {
    uint32_t nlen = detail::read_pod<uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    uint32_t ndim = detail::read_pod<uint32_t>(is);
    NamedArray arr;
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      int64_t dim = static_cast<int64_t>(detail::read_pod<uint64_t>(is));
      arr.shape.push_back(dim);
      numel *= dim;
    }
    arr.width = detail::read_pod<uint8_t>(is);
    arr.data.resize(static_cast<size_t>(numel));
    if (arr.width == 4) {
      for (auto& v : arr.data) v = static_cast<double>(detail::read_pod<float>(is));
    } else if (arr.width == 8) {
      for (auto& v : arr.data) v = detail::read_pod<double>(is);
    } else {
      throw std::runtime_error("checkpoint: unsupported scalar width in " + path);
    }
    c.arrays.emplace_back(std::move(name), std::move(arr));
  }
  return c;
}

namespace detail {

inline nlohmann::json config_to_json(const ViTConfig& cfg) {
  return {{"image_size", cfg.image_size},   {"patch_size", cfg.patch_size}, {"channels", cfg.channels},
          {"embed_dim", cfg.embed_dim},     {"num_blocks", cfg.num_blocks}, {"num_heads", cfg.num_heads},
          {"mlp_ratio", cfg.mlp_ratio},     {"num_classes", cfg.num_classes}};
}

inline ViTConfig config_from_json(const nlohmann::json& j) {
  ViTConfig cfg;
  cfg.image_size = j.at("image_size").get<int64_t>();
  cfg.patch_size = j.at("patch_size").get<int64_t>();
  cfg.channels = j.at("channels").get<int64_t>();
  cfg.embed_dim = j.at("embed_dim").get<int64_t>();
  cfg.num_blocks = j.at("num_blocks").get<int64_t>();
  cfg.num_heads = j.at("num_heads").get<int64_t>();
  cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
  cfg.num_classes = j.at("num_classes").get<int64_t>();
  cfg.validate();
  return cfg;
}

template <typename Real>
NamedArray to_array(const DiffTensor<Real>& t, int width) {
  NamedArray a;
  a.shape = t.shape();
  a.width = width;
  a.data.resize(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) a.data[static_cast<size_t>(i)] = static_cast<double>(t.data()[i]);
  return a;
}

template <typename Real>
DiffTensor<Real> from_array(const NamedArray& a) {
  DiffTensor<Real> t(a.shape);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<Real>(a.data[static_cast<size_t>(i)]);
  return t;
}

}  // namespace detail

template <typename Real>
Checkpoint model_checkpoint(const ViTWeights<Real>& w, int precision) {
  if (precision != 32 && precision != 64)
    throw std::invalid_argument("model_checkpoint: precision must be 32 or 64");
  int width = precision / 8;
  Checkpoint c;
  c.meta["kind"] = "model";
  c.meta["precision"] = precision;
  c.meta["model"] = detail::config_to_json(w.config);
  c.meta["blocks"] = nlohmann::json::array();
  for (const auto& b : w.blocks)
    c.meta["blocks"].push_back(
        {{"qk_head_dim", b.qk_head_dim}, {"v_head_dims", b.v_head_dims}, {"hidden", b.hidden}});
  c.arrays.emplace_back("patch_embed", detail::to_array(w.patch_embed, width));
  c.arrays.emplace_back("class_token", detail::to_array(w.class_token, width));
  c.arrays.emplace_back("pos_embed", detail::to_array(w.pos_embed, width));
  c.arrays.emplace_back("final_gamma", detail::to_array(w.final_gamma, width));
  c.arrays.emplace_back("final_beta", detail::to_array(w.final_beta, width));
  c.arrays.emplace_back("head", detail::to_array(w.head, width));
  for (size_t l = 0; l < w.blocks.size(); ++l) {
    const auto& b = w.blocks[l];
    std::string pre = "block" + std::to_string(l) + "/";
    c.arrays.emplace_back(pre + "w_q", detail::to_array(b.w_q, width));
    c.arrays.emplace_back(pre + "w_k", detail::to_array(b.w_k, width));
    c.arrays.emplace_back(pre + "w_v", detail::to_array(b.w_v, width));
    c.arrays.emplace_back(pre + "w_proj", detail::to_array(b.w_proj, width));
    c.arrays.emplace_back(pre + "w_mlp1", detail::to_array(b.w_mlp1, width));
    c.arrays.emplace_back(pre + "w_mlp2", detail::to_array(b.w_mlp2, width));
    c.arrays.emplace_back(pre + "ln1_gamma", detail::to_array(b.ln1_gamma, width));
    c.arrays.emplace_back(pre + "ln1_beta", detail::to_array(b.ln1_beta, width));
    c.arrays.emplace_back(pre + "ln2_gamma", detail::to_array(b.ln2_gamma, width));
    c.arrays.emplace_back(pre + "ln2_beta", detail::to_array(b.ln2_beta, width));
  }
  return c;
}

template <typename Real>
ViTWeights<Real> model_from_checkpoint(const Checkpoint& c) {
  ViTWeights<Real> w;
  w.config = detail::config_from_json(c.meta.at("model"));
  w.patch_embed = detail::from_array<Real>(c.find("patch_embed"));
  w.class_token = detail::from_array<Real>(c.find("class_token"));
  w.pos_embed = detail::from_array<Real>(c.find("pos_embed"));
  w.final_gamma = detail::from_array<Real>(c.find("final_gamma"));
  w.final_beta = detail::from_array<Real>(c.find("final_beta"));
  w.head = detail::from_array<Real>(c.find("head"));
  const auto& blocks = c.meta.at("blocks");
  for (size_t l = 0; l < blocks.size(); ++l) {
    BlockWeights<Real> b;
    b.qk_head_dim = blocks[l].at("qk_head_dim").get<int64_t>();
    b.v_head_dims = blocks[l].at("v_head_dims").get<std::vector<int64_t>>();
    b.hidden = blocks[l].at("hidden").get<int64_t>();
    std::string pre = "block" + std::to_string(l) + "/";
    b.w_q = detail::from_array<Real>(c.find(pre + "w_q"));
    b.w_k = detail::from_array<Real>(c.find(pre + "w_k"));
    b.w_v = detail::from_array<Real>(c.find(pre + "w_v"));
    b.w_proj = detail::from_array<Real>(c.find(pre + "w_proj"));
    b.w_mlp1 = detail::from_array<Real>(c.find(pre + "w_mlp1"));
    b.w_mlp2 = detail::from_array<Real>(c.find(pre + "w_mlp2"));
    b.ln1_gamma = detail::from_array<Real>(c.find(pre + "ln1_gamma"));
    b.ln1_beta = detail::from_array<Real>(c.find(pre + "ln1_beta"));
    b.ln2_gamma = detail::from_array<Real>(c.find(pre + "ln2_gamma"));
    b.ln2_beta = detail::from_array<Real>(c.find(pre + "ln2_beta"));
    w.blocks.push_back(std::move(b));
  }
  return w;
}

// soft-state checkpoint: the model plus all primal/dual/gate variables
template <typename Real>
Checkpoint state_checkpoint(const OptimState<Real>& s, int precision) {
  Checkpoint c = model_checkpoint(s.weights, precision);
  c.meta["kind"] = "state";
  c.meta["iteration"] = s.iteration;
  const ViTConfig& cfg = s.weights.config;
  int64_t L = cfg.num_blocks, H = cfg.num_heads;

  NamedArray s1{{L}, s.primal.s1, 8}, s3{{L}, s.primal.s3, 8};
  NamedArray r{{L, H}, {}, 8}, y1{{L}, s.dual.y1, 8}, y3{{L}, s.dual.y3, 8}, p{{L, H}, {}, 8};
  NamedArray z{{1}, {s.dual.z}, 8}, gates{{L, 2}, {}, 8};
  for (const auto& br : s.primal.r) r.data.insert(r.data.end(), br.begin(), br.end());
  for (const auto& bp : s.dual.p) p.data.insert(p.data.end(), bp.begin(), bp.end());
  for (const auto& lg : s.gates.logits) {
    gates.data.push_back(lg[0]);
    gates.data.push_back(lg[1]);
  }
  c.arrays.emplace_back("opt/s1", std::move(s1));
  c.arrays.emplace_back("opt/s3", std::move(s3));
  c.arrays.emplace_back("opt/r", std::move(r));
  c.arrays.emplace_back("opt/y1", std::move(y1));
  c.arrays.emplace_back("opt/y3", std::move(y3));
  c.arrays.emplace_back("opt/p", std::move(p));
  c.arrays.emplace_back("opt/z", std::move(z));
  c.arrays.emplace_back("opt/gate_logits", std::move(gates));
  return c;
}

template <typename Real>
OptimState<Real> state_from_checkpoint(const Checkpoint& c, const ViTWeights<Real>& teacher) {
  if (c.meta.at("kind").get<std::string>() != "state")
    throw std::runtime_error("state_from_checkpoint: checkpoint is not a compression state");
  OptimState<Real> s = OptimState<Real>::start(model_from_checkpoint<Real>(c));
  s.teacher = teacher.clone();
  s.iteration = c.meta.at("iteration").get<int64_t>();
  const ViTConfig& cfg = s.weights.config;
  int64_t L = cfg.num_blocks, H = cfg.num_heads;
  s.primal.s1 = c.find("opt/s1").data;
  s.primal.s3 = c.find("opt/s3").data;
  const auto& r = c.find("opt/r").data;
  const auto& p = c.find("opt/p").data;
  for (int64_t l = 0; l < L; ++l) {
    s.primal.r[static_cast<size_t>(l)].assign(r.begin() + l * H, r.begin() + (l + 1) * H);
    s.dual.p[static_cast<size_t>(l)].assign(p.begin() + l * H, p.begin() + (l + 1) * H);
  }
  s.dual.y1 = c.find("opt/y1").data;
  s.dual.y3 = c.find("opt/y3").data;
  s.dual.z = c.find("opt/z").data[0];
  const auto& g = c.find("opt/gate_logits").data;
  for (int64_t l = 0; l < L; ++l)
    s.gates.logits[static_cast<size_t>(l)] = {g[static_cast<size_t>(2 * l)],
                                              g[static_cast<size_t>(2 * l + 1)]};
  return s;
}

}  // namespace vitc
