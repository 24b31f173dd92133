#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "x2teeth/adam.hpp"
#include "x2teeth/io.hpp"
#include "x2teeth/json_io.hpp"
#include "x2teeth/net.hpp"

// X2T1 checkpoints: net config, parameters, optimizer moments and the
// training position, enough to resume bit-identically.
//
//   "X2T1" u64 version
//   u64 len, net config JSON
//   u64 stage, u64 epoch, u64 step
//   f64 lr, beta1, beta2, eps; u64 adam step
//   u64 P; P × (u64 len, name, u64 rank, rank × u64 dim, f32 values)
//   u64 M; M × (u64 param index, f32 m[], f32 v[])
namespace x2t {

inline constexpr std::uint64_t kCheckpointVersion = 1;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NetConfig, height, width, coord_channels, instance_norm,
                                                base_channels, stages, max_channels, seg_hidden, seg_prior, patch,
                                                recon_encoder, latent, recon_decoder, init_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, lr, beta1, beta2, eps)

struct Checkpoint {
  NetConfig net;
  std::uint64_t stage = 0;  // last stage trained into these weights
  std::uint64_t epoch = 0;  // epochs completed in that stage
  std::uint64_t step = 0;   // steps completed in that stage
  std::vector<std::string> names;
  std::vector<std::vector<std::int64_t>> shapes;
  std::vector<std::vector<float>> values;
  AdamState<float> adam;
  std::vector<std::uint64_t> moment_index;  // parameter index of adam.m[i] / adam.v[i]
};

inline Checkpoint make_checkpoint(const X2TeethNet<float>& net, std::uint64_t stage, std::uint64_t epoch,
                                  std::uint64_t step, const AdamState<float>& adam,
                                  const std::vector<std::uint64_t>& moment_index) {
  Checkpoint c{net.config(), stage, epoch, step, net.names(), {}, {}, adam, moment_index};
  for (const auto& t : net.tensors()) {
    c.shapes.push_back(t.shape());
    c.values.emplace_back(t.values().begin(), t.values().end());
  }
  return c;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto tmp = path.string() + ".tmp";
  {
    BinaryWriter w(tmp);
    w.magic("X2T1");
    w.u64(kCheckpointVersion);
    const std::string cfg = json(c.net).dump();
    w.u64(cfg.size());
    w.bytes(cfg.data(), cfg.size());
    w.u64(c.stage);
    w.u64(c.epoch);
    w.u64(c.step);
    w.f64(c.adam.config.lr);
    w.f64(c.adam.config.beta1);
    w.f64(c.adam.config.beta2);
    w.f64(c.adam.config.eps);
    w.u64(c.adam.step);
    w.u64(c.names.size());
    for (std::size_t i = 0; i < c.names.size(); ++i) {
      w.u64(c.names[i].size());
      w.bytes(c.names[i].data(), c.names[i].size());
      w.u64(c.shapes[i].size());
      for (auto d : c.shapes[i]) w.u64(static_cast<std::uint64_t>(d));
      w.array<float>(c.values[i]);
    }
    w.u64(c.moment_index.size());
    for (std::size_t i = 0; i < c.moment_index.size(); ++i) {
      w.u64(c.moment_index[i]);
      w.array<float>(c.adam.m[i]);
      w.array<float>(c.adam.v[i]);
    }
    w.close();
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.expect_magic("X2T1");
  if (const auto v = r.u64(); v != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  auto str = [&](std::uint64_t limit) {
    const auto n = r.u64();
    if (n > limit) throw IoError(path.string() + ": corrupt string length");
    std::string s(n, '\0');
    r.bytes(s.data(), n);
    return s;
  };
  Checkpoint c;
  try {
    c.net = json::parse(str(1 << 20)).get<NetConfig>();
    c.net.validate();
  } catch (const std::exception& e) {
    throw IoError(path.string() + ": bad net config: " + e.what());
  }
  c.stage = r.u64();
  c.epoch = r.u64();
  c.step = r.u64();
  c.adam.config.lr = r.f64();
  c.adam.config.beta1 = r.f64();
  c.adam.config.beta2 = r.f64();
  c.adam.config.eps = r.f64();
  c.adam.step = r.u64();
  const auto P = r.u64();
  if (P > 100000) throw IoError(path.string() + ": corrupt parameter count");
  for (std::uint64_t i = 0; i < P; ++i) {
    c.names.push_back(str(4096));
    const auto rank = r.u64();
    if (rank == 0 || rank > 8) throw IoError(path.string() + ": corrupt rank");
    std::vector<std::int64_t> shape;
    std::uint64_t n = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      const auto d = r.u64();
      if (d == 0 || d > (1ull << 32)) throw IoError(path.string() + ": corrupt extent");
      shape.push_back(static_cast<std::int64_t>(d));
      n *= d;
    }
    if (n > (1ull << 32)) throw IoError(path.string() + ": corrupt tensor size");
    std::vector<float> vals(n);
    r.array<float>(vals);
    c.shapes.push_back(std::move(shape));
    c.values.push_back(std::move(vals));
  }
  const auto M = r.u64();
  if (M > P) throw IoError(path.string() + ": corrupt moment count");
  for (std::uint64_t i = 0; i < M; ++i) {
    const auto idx = r.u64();
    if (idx >= P) throw IoError(path.string() + ": corrupt moment index");
    c.moment_index.push_back(idx);
    c.adam.m.emplace_back(c.values[idx].size());
    c.adam.v.emplace_back(c.values[idx].size());
    r.array<float>(c.adam.m.back());
    r.array<float>(c.adam.v.back());
  }
  if (!r.at_end()) throw IoError(path.string() + ": trailing bytes");
  return c;
}

/// Copies checkpoint weights into a net built from the same config.
inline void load_weights(X2TeethNet<float>& net, const Checkpoint& c) {
  if (net.config() != c.net) throw IoError("checkpoint net config differs from the requested one");
  if (net.names() != c.names) throw IoError("checkpoint parameter names do not match the network");
  for (std::size_t i = 0; i < c.names.size(); ++i) {
    auto& t = net.tensors()[i];
    if (t.shape() != c.shapes[i]) throw IoError("checkpoint shape mismatch for " + c.names[i]);
    std::copy(c.values[i].begin(), c.values[i].end(), t.values().begin());
  }
}

}  // namespace x2t
