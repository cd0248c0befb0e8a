#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "kge/binary_io.hpp"
#include "kge/error.hpp"
#include "kge/model.hpp"
#include "kge/training.hpp"

namespace kge {

// Layout (little-endian):
//   "KGEC" u32 version
//   model config: kind, dim, norm, representation (u32), u (f64), num_entities, num_relations (u32),
//                 d_tok, heads, ffn_mult, combiner, center_token, num_anchors (u32)
//   u64 config hash, u64 step
//   u32 table count; per table: name, u64 rows, u64 cols, rows*cols f32
//   u8 has_optimizer; per table: m (f32), v (f32), per-row step counts (u64)
//   rng state (length-prefixed text)
struct CheckpointHeader {
  ModelConfig model;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_f32(std::ostream& out, const std::vector<T>& values) {
  if constexpr (std::is_same_v<T, float>) {
    io::write_array<float>(out, values);
  } else {
    std::vector<float> tmp(values.begin(), values.end());
    io::write_array<float>(out, tmp);
  }
}

template <typename T>
void read_f32(std::istream& in, std::vector<T>& values, std::string_view what) {
  if constexpr (std::is_same_v<T, float>) {
    io::read_array<float>(in, values, what);
  } else {
    std::vector<float> tmp(values.size());
    io::read_array<float>(in, tmp, what);
    std::copy(tmp.begin(), tmp.end(), values.begin());
  }
}

}  // namespace detail

inline void write_checkpoint_header(std::ostream& out, const CheckpointHeader& h) {
  const auto& m = h.model;
  io::write_magic(out, "KGEC");
  io::write_pod<std::uint32_t>(out, kCheckpointVersion);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.kind));
  io::write_pod<std::uint32_t>(out, m.dim);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.norm));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.representation));
  io::write_pod<double>(out, m.u);
  io::write_pod<std::uint32_t>(out, m.num_entities);
  io::write_pod<std::uint32_t>(out, m.num_relations);
  io::write_pod<std::uint32_t>(out, m.encoder.d_tok);
  io::write_pod<std::uint32_t>(out, m.encoder.heads);
  io::write_pod<std::uint32_t>(out, m.encoder.ffn_mult);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.encoder.combiner));
  io::write_pod<std::uint32_t>(out, m.encoder.center_token ? 1u : 0u);
  io::write_pod<std::uint32_t>(out, m.encoder.num_anchors);
  io::write_pod<std::uint64_t>(out, h.config_hash);
  io::write_pod<std::uint64_t>(out, h.step);
}

inline CheckpointHeader read_checkpoint_header(std::istream& in) {
  io::expect_magic(in, "KGEC");
  if (const auto v = io::read_pod<std::uint32_t>(in, "version"); v != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(v) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointHeader h;
  auto& m = h.model;
  const auto kind = io::read_pod<std::uint32_t>(in, "model kind");
  if (kind > static_cast<std::uint32_t>(ModelKind::interht_plus)) throw FormatError("unknown model kind in checkpoint");
  m.kind = static_cast<ModelKind>(kind);
  m.dim = io::read_pod<std::uint32_t>(in, "dim");
  m.norm = static_cast<NormOrder>(io::read_pod<std::uint32_t>(in, "norm"));
  m.representation = static_cast<EntityRepresentation>(io::read_pod<std::uint32_t>(in, "representation"));
  m.u = io::read_pod<double>(in, "u");
  m.num_entities = io::read_pod<std::uint32_t>(in, "num_entities");
  m.num_relations = io::read_pod<std::uint32_t>(in, "num_relations");
  m.encoder.d_tok = io::read_pod<std::uint32_t>(in, "d_tok");
  m.encoder.heads = io::read_pod<std::uint32_t>(in, "heads");
  m.encoder.ffn_mult = io::read_pod<std::uint32_t>(in, "ffn_mult");
  m.encoder.combiner = static_cast<Combiner>(io::read_pod<std::uint32_t>(in, "combiner"));
  m.encoder.center_token = io::read_pod<std::uint32_t>(in, "center_token") != 0;
  m.encoder.num_anchors = io::read_pod<std::uint32_t>(in, "num_anchors");
  m.encoder.out_dim = m.dim;
  m.encoder.num_entities = m.num_entities;
  h.config_hash = io::read_pod<std::uint64_t>(in, "config hash");
  h.step = io::read_pod<std::uint64_t>(in, "step");
  return h;
}

template <typename T>
void save_checkpoint(std::ostream& out, const Model<T>& model, const AdamState<T>* optimizer, std::uint64_t step,
                     const std::string& rng_state) {
  CheckpointHeader h;
  h.model = model.config();
  h.config_hash = io::fnv1a(model.config().fingerprint());
  h.step = step;
  write_checkpoint_header(out, h);
  const auto& params = model.params();
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::write_string(out, p.name);
    io::write_pod<std::uint64_t>(out, p.rows);
    io::write_pod<std::uint64_t>(out, p.cols);
    detail::write_f32(out, p.value);
  }
  io::write_pod<std::uint8_t>(out, optimizer ? 1 : 0);
  if (optimizer) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      detail::write_f32(out, optimizer->m[k]);
      detail::write_f32(out, optimizer->v[k]);
      io::write_array<std::uint64_t>(out, optimizer->steps[k]);
    }
  }
  io::write_string(out, rng_state);
  if (!out) throw Error("failed writing checkpoint");
}

struct LoadedCheckpoint {
  CheckpointHeader header;
  bool has_optimizer = false;
  std::string rng_state;
  std::vector<std::string> warnings;
};

// Loads parameters into an already-constructed model. A config-hash mismatch is
// a warning (also passed to on_warning right away, so it is not lost if a
// DimensionError follows); a table whose name or shape differs is a DimensionError.
template <typename T>
LoadedCheckpoint load_checkpoint(std::istream& in, Model<T>& model, AdamState<T>* optimizer = nullptr,
                                 const std::function<void(const std::string&)>& on_warning = {}) {
  LoadedCheckpoint out;
  out.header = read_checkpoint_header(in);
  const auto expected_hash = io::fnv1a(model.config().fingerprint());
  if (out.header.config_hash != expected_hash) {
    out.warnings.push_back("checkpoint config hash differs from the current configuration (" +
                           out.header.model.fingerprint() + " vs " + model.config().fingerprint() + ")");
    if (on_warning) on_warning(out.warnings.back());
  }
  if (out.header.model.kind != model.kind()) {
    throw DimensionError("checkpoint holds a " + std::string(to_string(out.header.model.kind)) + " model, not " +
                         std::string(to_string(model.kind())));
  }
  auto& params = model.params();
  const auto count = io::read_pod<std::uint32_t>(in, "table count");
  if (count != params.size()) throw DimensionError("checkpoint has a different set of parameter tables");
  for (auto& p : params) {
    const auto name = io::read_string(in, "table name");
    const auto rows = io::read_pod<std::uint64_t>(in, "rows");
    const auto cols = io::read_pod<std::uint64_t>(in, "cols");
    if (name != p.name || rows != p.rows || cols != p.cols) {
      throw DimensionError("table '" + name + "' is " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " in the checkpoint but '" + p.name + "' is " + std::to_string(p.rows) + "x" +
                           std::to_string(p.cols) + " in the model");
    }
    detail::read_f32(in, p.value, "table data");
  }
  out.has_optimizer = io::read_pod<std::uint8_t>(in, "optimizer flag") != 0;
  if (out.has_optimizer) {
    AdamState<T> tmp(params);
    for (std::size_t k = 0; k < params.size(); ++k) {
      detail::read_f32(in, tmp.m[k], "adam m");
      detail::read_f32(in, tmp.v[k], "adam v");
      io::read_array<std::uint64_t>(in, tmp.steps[k], "adam steps");
    }
    if (optimizer) *optimizer = std::move(tmp);
  }
  out.rng_state = io::read_string(in, "rng state");
  return out;
}

}  // namespace kge
