#pragma once
// Self-describing checkpoint container.
//
// Layout: 8-byte magic, little-endian u64 header length, JSON header,
// float32 payload. The header lists every tensor (name, rows, cols, byte
// offset) plus free-form metadata: architecture, seed, config hash, and
// training history. Loading restores by name and validates shapes, so a
// checkpoint is usable only with a compatible architecture.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpv/io.hpp"
#include "tpv/nn/resnet.hpp"

namespace tpv {

inline constexpr char kCkptMagic[8] = {'T', 'P', 'V', 'C', 'K', 'P', 'T', '1'};

struct TensorBlob {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<TensorBlob> tensors;

  const TensorBlob* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline void save_checkpoint(const std::filesystem::path& path, nlohmann::json meta,
                            const std::vector<TensorBlob>& tensors) {
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    index.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
    if (t.data.size() != static_cast<std::size_t>(t.rows * t.cols))
      throw std::logic_error("tensor size mismatch in " + t.name);
    offset += t.data.size() * sizeof(float);
  }
  meta["format"] = 1;
  meta["tensors"] = std::move(index);
  const std::string header = meta.dump();
  std::string bytes;
  bytes.reserve(sizeof(kCkptMagic) + 8 + header.size() + offset);
  bytes.append(kCkptMagic, sizeof(kCkptMagic));
  std::uint64_t hlen = header.size();
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((hlen >> (8 * i)) & 0xff));
  bytes += header;
  for (const auto& t : tensors)
    bytes.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  atomic_write_file(path, bytes);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kCkptMagic) + 8 ||
      std::memcmp(bytes.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i)
    hlen |= static_cast<std::uint64_t>(
                static_cast<unsigned char>(bytes[sizeof(kCkptMagic) + i]))
            << (8 * i);
  const std::size_t header_at = sizeof(kCkptMagic) + 8;
  if (header_at + hlen > bytes.size()) throw std::runtime_error("truncated checkpoint header");
  Checkpoint ckpt;
  ckpt.meta = nlohmann::json::parse(bytes.substr(header_at, hlen));
  const std::size_t payload_at = header_at + hlen;
  for (const auto& e : ckpt.meta.at("tensors")) {
    TensorBlob t;
    t.name = e.at("name").get<std::string>();
    t.rows = e.at("rows").get<Eigen::Index>();
    t.cols = e.at("cols").get<Eigen::Index>();
    const std::size_t off = e.at("offset").get<std::size_t>();
    const std::size_t n = static_cast<std::size_t>(t.rows * t.cols);
    if (payload_at + off + n * sizeof(float) > bytes.size())
      throw std::runtime_error("truncated checkpoint payload at " + t.name);
    t.data.resize(n);
    std::memcpy(t.data.data(), bytes.data() + payload_at + off, n * sizeof(float));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

inline nlohmann::json arch_to_json(const nn::ResNetConfig& cfg) {
  return {{"input_channels", cfg.input_channels},
          {"stage_widths", cfg.stage_widths},
          {"blocks", cfg.blocks},
          {"pooling", cfg.pooling == nn::PoolKind::sap ? "sap" : "avg"},
          {"embed_dim", cfg.embed_dim}};
}

inline nn::ResNetConfig arch_from_json(const nlohmann::json& j) {
  nn::ResNetConfig cfg;
  cfg.input_channels = j.at("input_channels").get<int>();
  auto w = j.at("stage_widths").get<std::vector<int>>();
  auto b = j.at("blocks").get<std::vector<int>>();
  if (w.size() != 4 || b.size() != 4) throw std::runtime_error("bad architecture description");
  std::copy(w.begin(), w.end(), cfg.stage_widths.begin());
  std::copy(b.begin(), b.end(), cfg.blocks.begin());
  const std::string pool = j.at("pooling").get<std::string>();
  if (pool == "sap")
    cfg.pooling = nn::PoolKind::sap;
  else if (pool == "avg")
    cfg.pooling = nn::PoolKind::global_avg;
  else
    throw std::runtime_error("unknown pooling kind: " + pool);
  cfg.embed_dim = j.at("embed_dim").get<int>();
  return cfg;
}

template <typename S>
void append_tensor(std::vector<TensorBlob>& out, const std::string& name, const nn::Mat<S>& m) {
  TensorBlob t;
  t.name = name;
  t.rows = m.rows();
  t.cols = m.cols();
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[i] = static_cast<float>(m.data()[i]);
  out.push_back(std::move(t));
}

template <typename S>
void append_tensor(std::vector<TensorBlob>& out, const std::string& name, const nn::Vec<S>& v) {
  TensorBlob t;
  t.name = name;
  t.rows = v.size();
  t.cols = 1;
  t.data.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v(i));
  out.push_back(std::move(t));
}

template <typename S>
void restore_tensor(const Checkpoint& ckpt, const std::string& name, nn::Mat<S>& m) {
  const TensorBlob* t = ckpt.find(name);
  if (!t) throw std::runtime_error("checkpoint is missing tensor " + name);
  if (t->rows != m.rows() || t->cols != m.cols())
    throw std::runtime_error("checkpoint tensor " + name + " has incompatible shape");
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(t->data[i]);
}

template <typename S>
void restore_tensor(const Checkpoint& ckpt, const std::string& name, nn::Vec<S>& v) {
  const TensorBlob* t = ckpt.find(name);
  if (!t) throw std::runtime_error("checkpoint is missing tensor " + name);
  if (t->rows != v.size() || t->cols != 1)
    throw std::runtime_error("checkpoint tensor " + name + " has incompatible shape");
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<S>(t->data[i]);
}

// Snapshot every trainable parameter and batch-norm buffer, names prefixed.
template <typename S>
void snapshot_encoder(nn::ResNetEncoder<S>& enc, const std::string& prefix,
                      std::vector<TensorBlob>& out) {
  for (auto* p : enc.params()) append_tensor(out, prefix + p->name, p->value);
  for (auto& s : enc.state()) append_tensor(out, prefix + s.name, *s.vec);
}

template <typename S>
void restore_encoder(nn::ResNetEncoder<S>& enc, const Checkpoint& ckpt,
                     const std::string& prefix) {
  for (auto* p : enc.params()) restore_tensor(ckpt, prefix + p->name, p->value);
  for (auto& s : enc.state()) restore_tensor(ckpt, prefix + s.name, *s.vec);
}

}  // namespace tpv
