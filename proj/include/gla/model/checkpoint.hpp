#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gla/io.hpp"
#include "gla/model/params.hpp"

namespace gla {

// Checkpoint layout (little-endian):
//   "GLAC" u32 version
//   config: 11 x u64 dims, f64 alpha, f64 dropout, f64 adapter init std, u64 init_seed
//   u32 block count, then per block: string name, u32 ndim, u64 extents, f64 values
// Loading parses the whole file before touching any parameter.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  io::ByteWriter w;
  w.text("GLAC");
  w.u32(kCheckpointVersion);
  const auto& c = params.config;
  for (std::size_t v : {c.image_size, c.channels, c.patch, c.hidden, c.layers, c.heads, c.ffn_hidden, c.vocab,
                        c.max_answer, c.max_question, c.adapter_rank}) {
    w.u64(v);
  }
  w.f64(c.adapter_alpha);
  w.f64(c.adapter_dropout);
  w.f64(c.adapter_init_std);
  w.u64(c.init_seed);
  std::uint32_t count = 0;
  params.visit_all([&](const std::string&, const Tensor&) { ++count; });
  w.u32(count);
  params.visit_all([&](const std::string& name, const Tensor& t) {
    w.string(name);
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto e : t.shape()) w.u64(e);
    w.f64s(t.values());
  });
  return w.take();
}

inline ModelParams decode_checkpoint(std::span<const std::uint8_t> data, const std::string& context) {
  io::ByteReader r(data, context);
  auto magic = r.bytes(4);
  if (std::string(magic.begin(), magic.end()) != "GLAC") r.fail("magic");
  if (r.u32() != kCheckpointVersion) throw CorruptionError(context + ": unsupported checkpoint version");
  VLMConfig c;
  for (std::size_t* v : {&c.image_size, &c.channels, &c.patch, &c.hidden, &c.layers, &c.heads, &c.ffn_hidden,
                         &c.vocab, &c.max_answer, &c.max_question, &c.adapter_rank}) {
    const auto raw = r.u64();
    if (raw > (1u << 20)) r.fail("config dimension");
    *v = static_cast<std::size_t>(raw);
  }
  c.adapter_alpha = r.f64();
  c.adapter_dropout = r.f64();
  c.adapter_init_std = r.f64();
  c.init_seed = r.u64();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw CorruptionError(context + ": invalid stored config: " + e.what());
  }

  std::map<std::string, Tensor> blocks;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.string();
    const auto ndim = r.u32();
    if (ndim == 0 || ndim > 4) r.fail("shape rank of " + name);
    Shape shape;
    std::size_t total = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      const auto e = r.u64();
      if (e == 0 || e > (1u << 24) || total > (1u << 26) / e) r.fail("extent of " + name);
      shape.push_back(static_cast<std::size_t>(e));
      total *= static_cast<std::size_t>(e);
    }
    auto values = r.f64s(total);
    if (!blocks.emplace(name, Tensor(shape, std::move(values))).second) {
      throw CorruptionError(context + ": duplicate block " + name);
    }
  }
  r.expect_end();

  ModelParams params = init_params(c);
  std::size_t used = 0;
  params.visit_all([&](const std::string& name, Tensor& t) {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw CorruptionError(context + ": missing block " + name);
    if (it->second.shape() != t.shape()) {
      throw CorruptionError(context + ": block " + name + " has shape " + shape_string(it->second.shape()) +
                            ", expected " + shape_string(t.shape()));
    }
    ++used;
  });
  if (used != blocks.size()) throw CorruptionError(context + ": unexpected extra blocks");
  params.visit_all([&](const std::string& name, Tensor& t) { t = std::move(blocks.at(name)); });
  return params;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  io::write_file_atomic(path, encode_checkpoint(params));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

inline bool params_bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config)) return false;
  std::vector<const Tensor*> left, right;
  a.visit_all([&](const std::string&, const Tensor& t) { left.push_back(&t); });
  b.visit_all([&](const std::string&, const Tensor& t) { right.push_back(&t); });
  if (left.size() != right.size()) return false;
  for (std::size_t i = 0; i < left.size(); ++i) {
    if (left[i]->shape() != right[i]->shape() || !left[i]->bitwise_equal(*right[i])) return false;
  }
  return true;
}

// Digest of the frozen base weights alone, in visit order.
inline std::string base_weights_sha256(const ModelParams& params) {
  io::ByteWriter w;
  params.visit_base([&](const std::string& name, const Tensor& t) {
    w.string(name);
    w.f64s(t.values());
  });
  return io::sha256_hex(w.buffer());
}

}  // namespace gla
