#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "basconv/common.hpp"
#include "basconv/matrix.hpp"
#include "basconv/model.hpp"
#include "basconv/trainer.hpp"

namespace basconv {

// Checkpoint container (.bcv): the magic "BCV1", a little-endian u32 header
// length, a JSON header describing the model and tensor layout, then the raw
// row-major double payloads in header order. Doubles are written bit-exactly
// (host is assumed little-endian; the header records it).

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                        static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, nlohmann::json header,
                             const std::vector<std::pair<std::string, const DenseMatrix*>>& tensors) {
  nlohmann::json tlist = nlohmann::json::array();
  for (const auto& [name, m] : tensors)
    tlist.push_back({{"name", name}, {"rows", m->rows}, {"cols", m->cols}});
  header["tensors"] = std::move(tlist);
  header["format"] = "bcv";
  header["format_version"] = 1;
  header["endianness"] = "little";
  const std::string htext = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint: " + path);
  os.write("BCV1", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(htext.size()));
  os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, m] : tensors)
    os.write(reinterpret_cast<const char*>(m->v.data()),
             static_cast<std::streamsize>(m->v.size() * sizeof(double)));
  if (!os) throw ConfigError("short write to checkpoint: " + path);
}

struct RawCheckpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, DenseMatrix>> tensors;

  const DenseMatrix& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw DataError("checkpoint is missing tensor '" + name + "'");
  }
};

inline RawCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BCV1", 4) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  const std::uint32_t hlen = detail::read_u32(is);
  std::string htext(hlen, '\0');
  is.read(htext.data(), hlen);
  RawCheckpoint ck;
  ck.header = nlohmann::json::parse(htext);
  for (const auto& t : ck.header.at("tensors")) {
    DenseMatrix m(t.at("rows").get<int>(), t.at("cols").get<int>());
    is.read(reinterpret_cast<char*>(m.v.data()),
            static_cast<std::streamsize>(m.v.size() * sizeof(double)));
    ck.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  if (!is) throw DataError("truncated checkpoint: " + path);
  return ck;
}

// ---------------------------------------------------------------------------
// Model-level save/load
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::uint64_t graph_fingerprint = 0;
  std::string config_hash;
  std::uint64_t seed = 0;
  int epoch = 0;
};

inline void save_model_checkpoint(const std::string& path, const ModelParams& p,
                                  const CheckpointMeta& meta, const AdamState* adam = nullptr) {
  nlohmann::json h;
  h["model"] = "basconv";
  h["dim"] = p.dim;
  h["layers"] = p.n_layers();
  h["activation"] = activation_name(p.activation);
  h["use_biases"] = p.use_biases;
  h["hadamard_first"] = p.hadamard_first;
  h["graph_fingerprint"] = to_hex(meta.graph_fingerprint);
  h["config_hash"] = meta.config_hash;
  h["seed"] = meta.seed;
  h["epoch"] = meta.epoch;
  h["artifact_version"] = std::string(kArtifactVersion);
  h["adam_t"] = adam ? adam->t : 0;
  h["has_adam"] = adam != nullptr;

  std::vector<std::pair<std::string, const DenseMatrix*>> ts;
  for_each_tensor(const_cast<ModelParams&>(p), [&ts](const char* name, const DenseMatrix& m) {
    ts.emplace_back(name, &m);
  });
  if (adam) {
    for (std::size_t i = 0; i < adam->m.size(); ++i)
      ts.emplace_back("adam_m[" + std::to_string(i) + "]", &adam->m[i]);
    for (std::size_t i = 0; i < adam->v.size(); ++i)
      ts.emplace_back("adam_v[" + std::to_string(i) + "]", &adam->v[i]);
  }
  write_checkpoint(path, std::move(h), ts);
}

struct LoadedModelCheckpoint {
  ModelParams params;
  CheckpointMeta meta;
  bool has_adam = false;
  AdamState adam;
};

inline LoadedModelCheckpoint load_model_checkpoint(const std::string& path) {
  const RawCheckpoint ck = read_checkpoint(path);
  if (ck.header.at("model").get<std::string>() != "basconv")
    throw DataError("checkpoint holds a '" + ck.header.at("model").get<std::string>() +
                    "' model, expected basconv: " + path);
  LoadedModelCheckpoint out;
  ModelParams& p = out.params;
  p.dim = ck.header.at("dim").get<int>();
  p.activation = activation_from_name(ck.header.at("activation").get<std::string>());
  p.use_biases = ck.header.at("use_biases").get<bool>();
  p.hadamard_first = ck.header.at("hadamard_first").get<bool>();
  const int L = ck.header.at("layers").get<int>();
  p.e_u0 = ck.tensor("e_u0");
  p.e_i0 = ck.tensor("e_i0");
  p.layers.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const std::string tag = "[" + std::to_string(l) + "]";
    p.layers[static_cast<std::size_t>(l)].w_sp = ck.tensor("w_sp" + tag);
    p.layers[static_cast<std::size_t>(l)].w_ub = ck.tensor("w_ub" + tag);
    p.layers[static_cast<std::size_t>(l)].w_ui = ck.tensor("w_ui" + tag);
    p.layers[static_cast<std::size_t>(l)].w_ib = ck.tensor("w_ib" + tag);
    if (p.use_biases) p.layers[static_cast<std::size_t>(l)].bias = ck.tensor("bias" + tag);
  }
  out.meta.graph_fingerprint =
      std::stoull(ck.header.at("graph_fingerprint").get<std::string>(), nullptr, 16);
  out.meta.config_hash = ck.header.at("config_hash").get<std::string>();
  out.meta.seed = ck.header.at("seed").get<std::uint64_t>();
  out.meta.epoch = ck.header.at("epoch").get<int>();
  out.has_adam = ck.header.at("has_adam").get<bool>();
  if (out.has_adam) {
    out.adam.t = ck.header.at("adam_t").get<long long>();
    std::size_t n = 0;
    for (const auto& [name, m] : ck.tensors) {
      (void)m;
      if (name.rfind("adam_m", 0) == 0) ++n;
    }
    for (std::size_t i = 0; i < n; ++i) {
      out.adam.m.push_back(ck.tensor("adam_m[" + std::to_string(i) + "]"));
      out.adam.v.push_back(ck.tensor("adam_v[" + std::to_string(i) + "]"));
    }
  }
  return out;
}

// MF baseline checkpoints share the container with a different model tag.
inline void save_mf_checkpoint(const std::string& path, const DenseMatrix& e_u,
                               const DenseMatrix& e_i, const CheckpointMeta& meta) {
  nlohmann::json h;
  h["model"] = "bpr-mf";
  h["dim"] = e_u.cols;
  h["graph_fingerprint"] = to_hex(meta.graph_fingerprint);
  h["config_hash"] = meta.config_hash;
  h["seed"] = meta.seed;
  h["epoch"] = meta.epoch;
  h["artifact_version"] = std::string(kArtifactVersion);
  h["has_adam"] = false;
  h["adam_t"] = 0;
  write_checkpoint(path, std::move(h), {{"e_u", &e_u}, {"e_i", &e_i}});
}

struct LoadedMfCheckpoint {
  DenseMatrix e_u, e_i;
  CheckpointMeta meta;
};

inline LoadedMfCheckpoint load_mf_checkpoint(const std::string& path) {
  const RawCheckpoint ck = read_checkpoint(path);
  if (ck.header.at("model").get<std::string>() != "bpr-mf")
    throw DataError("checkpoint holds a '" + ck.header.at("model").get<std::string>() +
                    "' model, expected bpr-mf: " + path);
  LoadedMfCheckpoint out;
  out.e_u = ck.tensor("e_u");
  out.e_i = ck.tensor("e_i");
  out.meta.graph_fingerprint =
      std::stoull(ck.header.at("graph_fingerprint").get<std::string>(), nullptr, 16);
  out.meta.config_hash = ck.header.at("config_hash").get<std::string>();
  out.meta.seed = ck.header.at("seed").get<std::uint64_t>();
  out.meta.epoch = ck.header.at("epoch").get<int>();
  return out;
}

}  // namespace basconv
