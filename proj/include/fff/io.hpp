#pragma once

// Binary interchange formats. All integers are u32 and all scalars f32,
// little-endian; arrays are row-major and node-major.
//
//   FFFW  "FFFW" version flags K P H, then per tree: w_in[nodes][H],
//         b_in[nodes] (flag bit 0), w_out[nodes][H]; nodes = 2^P - 1.
//   ACTS  "ACTS" version B H, then f32[B][H].
//   UFBM  "UFBM" version L H heads epsilon(f32), then per layer:
//         w_q w_k w_v w_o [H][H], b_q b_k b_v b_o [H], ln1 scale, ln1 shift,
//         ln2 scale, ln2 shift [H], and an embedded FFFW block.
//
// Loaders check every header field and the exact byte length before building
// a value. Payload scalars are copied as bit patterns, so NaN payloads survive
// a save/load round trip.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fff/encoder.hpp"
#include "fff/errors.hpp"
#include "fff/tensor.hpp"
#include "fff/weights.hpp"

namespace fff::io {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kFlagInputBias = 1u;
inline constexpr std::size_t kFffwHeaderBytes = 24;
inline constexpr std::size_t kActsHeaderBytes = 16;
inline constexpr std::size_t kUfbmHeaderBytes = 24;

namespace detail {

inline std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) throw LengthError("size computation overflows");
  return a * b;
}

inline std::uint64_t add(std::uint64_t a, std::uint64_t b) {
  if (b > std::numeric_limits<std::uint64_t>::max() - a) throw LengthError("size computation overflows");
  return a + b;
}

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> vs) {
    bytes_.reserve(bytes_.size() + 4 * vs.size());
    for (const float v : vs) f32(v);
  }
  void magic(std::string_view m) {
    for (const char c : m) bytes_.push_back(static_cast<std::byte>(c));
  }
  std::vector<std::byte>& bytes() noexcept { return bytes_; }

 private:
  std::vector<std::byte> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

  void require(std::uint64_t n, std::string_view what) const {
    if (n > remaining()) {
      throw LengthError(std::string(what) + ": expected " + std::to_string(n) + " more bytes, got " +
                        std::to_string(remaining()));
    }
  }

  std::string magic() {
    require(4, "magic");
    std::string m(4, '\0');
    for (std::size_t i = 0; i < 4; ++i) m[i] = static_cast<char>(bytes_[pos_ + i]);
    pos_ += 4;
    return m;
  }

  std::uint32_t u32() {
    require(4, "u32 field");
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  void f32s(std::span<float> out) {
    require(mul(4, out.size()), "payload");
    for (auto& v : out) v = f32();
  }

  std::vector<float> f32_vector(std::size_t n) {
    std::vector<float> v(n);
    f32s(v);
    return v;
  }

  Matrix<float> f32_matrix(std::size_t rows, std::size_t cols) {
    Matrix<float> m(rows, cols);
    f32s(m.data());
    return m;
  }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

inline void expect_magic(ByteReader& r, std::string_view want) {
  const std::string got = r.magic();
  if (got != want) throw FormatError("bad magic '" + got + "', expected '" + std::string(want) + "'");
}

inline void expect_version(ByteReader& r, std::string_view format) {
  const std::uint32_t v = r.u32();
  if (v != kFormatVersion) {
    throw VersionError(std::string(format) + ": unsupported version " + std::to_string(v) + " (expected " +
                       std::to_string(kFormatVersion) + ")");
  }
}

inline std::uint32_t narrow(std::size_t v, std::string_view what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw FormatError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

inline void write_fffw(ByteWriter& w, const FFFLayerWeights<float>& weights) {
  const auto& cfg = weights.config();
  w.magic("FFFW");
  w.u32(kFormatVersion);
  w.u32(cfg.has_input_bias ? kFlagInputBias : 0u);
  w.u32(narrow(cfg.num_trees, "K"));
  w.u32(narrow(cfg.path_len(), "P"));
  w.u32(narrow(cfg.hidden_dim, "H"));
  for (const auto& t : weights.trees()) {
    w.f32s(t.w_in.data());
    if (cfg.has_input_bias) w.f32s(t.b_in);
    w.f32s(t.w_out.data());
  }
}

struct FffwHeader {
  FFFConfig config;
  std::uint64_t payload_bytes = 0;
};

inline FffwHeader read_fffw_header(ByteReader& r) {
  expect_magic(r, "FFFW");
  expect_version(r, "FFFW");
  const std::uint32_t flags = r.u32();
  const std::uint32_t k = r.u32();
  const std::uint32_t p = r.u32();
  const std::uint32_t h = r.u32();
  if ((flags & ~kFlagInputBias) != 0) throw FormatError("FFFW: unknown flag bits " + std::to_string(flags));
  if (k == 0) throw FormatError("FFFW: K must be at least 1");
  if (h == 0) throw FormatError("FFFW: H must be at least 1");
  if (p == 0 || p > kMaxPathLength) {
    throw FormatError("FFFW: P must be in [1, " + std::to_string(kMaxPathLength) + "], got " + std::to_string(p));
  }
  FFFConfig cfg{h, k, p - 1u, (flags & kFlagInputBias) != 0};
  const std::uint64_t nodes = (std::uint64_t{1} << p) - 1;
  std::uint64_t per_tree = mul(2, mul(nodes, h));
  if (cfg.has_input_bias) per_tree = add(per_tree, nodes);
  return {cfg, mul(4, mul(per_tree, k))};
}

inline FFFLayerWeights<float> read_fffw_payload(ByteReader& r, const FFFConfig& cfg) {
  const std::size_t nodes = cfg.nodes_per_tree();
  std::vector<TreeWeights<float>> trees;
  trees.reserve(cfg.num_trees);
  for (std::size_t k = 0; k < cfg.num_trees; ++k) {
    TreeWeights<float> t;
    t.w_in = r.f32_matrix(nodes, cfg.hidden_dim);
    if (cfg.has_input_bias) t.b_in = r.f32_vector(nodes);
    t.w_out = r.f32_matrix(nodes, cfg.hidden_dim);
    trees.push_back(std::move(t));
  }
  return FFFLayerWeights<float>(cfg, std::move(trees));
}

inline void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  const auto end = in.tellg();
  if (end < 0) throw IoError("cannot determine size of '" + path.string() + "'");
  std::vector<std::byte> bytes(static_cast<std::size_t>(end));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("read from '" + path.string() + "' failed");
  return bytes;
}

inline void expect_consumed(const ByteReader& r, std::string_view format) {
  if (r.remaining() != 0) {
    throw LengthError(std::string(format) + ": expected " + std::to_string(r.position()) + " bytes, got " +
                      std::to_string(r.position() + r.remaining()));
  }
}

}  // namespace detail

// ---- FFFW -------------------------------------------------------------------

inline std::vector<std::byte> encode_fffw(const FFFLayerWeights<float>& weights) {
  detail::ByteWriter w;
  detail::write_fffw(w, weights);
  return std::move(w.bytes());
}

inline FFFLayerWeights<float> decode_fffw(std::span<const std::byte> bytes) {
  detail::ByteReader r(bytes);
  const auto header = detail::read_fffw_header(r);
  const std::uint64_t expected = detail::add(kFffwHeaderBytes, header.payload_bytes);
  if (expected != bytes.size()) {
    throw LengthError("FFFW: expected " + std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
  }
  return detail::read_fffw_payload(r, header.config);
}

inline std::size_t save_fffw(const FFFLayerWeights<float>& weights, const std::filesystem::path& path) {
  const auto bytes = encode_fffw(weights);
  detail::write_file(path, bytes);
  return bytes.size();
}

inline FFFLayerWeights<float> load_fffw(const std::filesystem::path& path) {
  return decode_fffw(detail::read_file(path));
}

// ---- ACTS -------------------------------------------------------------------

inline std::vector<std::byte> encode_acts(const Matrix<float>& m) {
  detail::ByteWriter w;
  w.magic("ACTS");
  w.u32(kFormatVersion);
  w.u32(detail::narrow(m.rows(), "B"));
  w.u32(detail::narrow(m.cols(), "H"));
  w.f32s(m.data());
  return std::move(w.bytes());
}

inline Matrix<float> decode_acts(std::span<const std::byte> bytes) {
  detail::ByteReader r(bytes);
  detail::expect_magic(r, "ACTS");
  detail::expect_version(r, "ACTS");
  const std::uint32_t b = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint64_t expected = detail::add(kActsHeaderBytes, detail::mul(4, detail::mul(b, h)));
  if (expected != bytes.size()) {
    throw LengthError("ACTS: expected " + std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
  }
  return r.f32_matrix(b, h);
}

inline std::size_t save_acts(const Matrix<float>& m, const std::filesystem::path& path) {
  const auto bytes = encode_acts(m);
  detail::write_file(path, bytes);
  return bytes.size();
}

inline Matrix<float> load_acts(const std::filesystem::path& path) { return decode_acts(detail::read_file(path)); }

// ---- UFBM -------------------------------------------------------------------

inline std::vector<std::byte> encode_ufbm(const EncoderModel<float>& model) {
  detail::ByteWriter w;
  w.magic("UFBM");
  w.u32(kFormatVersion);
  w.u32(detail::narrow(model.layers().size(), "L"));
  w.u32(detail::narrow(model.hidden_dim(), "H"));
  w.u32(detail::narrow(model.num_heads(), "num_heads"));
  w.f32(static_cast<float>(model.layernorm_epsilon()));
  for (const auto& layer : model.layers()) {
    const auto& a = layer.attention;
    for (const auto* m : {&a.w_q, &a.w_k, &a.w_v, &a.w_o}) w.f32s(m->data());
    for (const auto* v : {&a.b_q, &a.b_k, &a.b_v, &a.b_o}) w.f32s(*v);
    w.f32s(layer.ln1.scale);
    w.f32s(layer.ln1.shift);
    w.f32s(layer.ln2.scale);
    w.f32s(layer.ln2.shift);
    detail::write_fffw(w, layer.intermediate);
  }
  return std::move(w.bytes());
}

inline EncoderModel<float> decode_ufbm(std::span<const std::byte> bytes) {
  detail::ByteReader r(bytes);
  detail::expect_magic(r, "UFBM");
  detail::expect_version(r, "UFBM");
  const std::uint32_t layers = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint32_t heads = r.u32();
  const float epsilon = r.f32();
  if (heads == 0 || h % heads != 0) {
    throw FormatError("UFBM: hidden size " + std::to_string(h) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  // Fixed per-layer bytes before the embedded FFFW block.
  const std::uint64_t dense_bytes =
      detail::mul(4, detail::add(detail::mul(4, detail::mul(h, h)), detail::mul(8, h)));
  std::vector<EncoderLayer<float>> out;
  for (std::uint32_t l = 0; l < layers; ++l) {
    r.require(dense_bytes, "UFBM layer " + std::to_string(l));
    AttentionWeights<float> a;
    a.num_heads = heads;
    a.w_q = r.f32_matrix(h, h);
    a.w_k = r.f32_matrix(h, h);
    a.w_v = r.f32_matrix(h, h);
    a.w_o = r.f32_matrix(h, h);
    a.b_q = r.f32_vector(h);
    a.b_k = r.f32_vector(h);
    a.b_v = r.f32_vector(h);
    a.b_o = r.f32_vector(h);
    LayerNormWeights<float> ln1{r.f32_vector(h), r.f32_vector(h)};
    LayerNormWeights<float> ln2{r.f32_vector(h), r.f32_vector(h)};
    const auto header = detail::read_fffw_header(r);
    if (header.config.hidden_dim != h) {
      throw FormatError("UFBM layer " + std::to_string(l) + ": embedded FFFW has H=" +
                        std::to_string(header.config.hidden_dim) + ", container has H=" + std::to_string(h));
    }
    r.require(header.payload_bytes, "UFBM layer " + std::to_string(l) + " FFFW payload");
    auto fff = detail::read_fffw_payload(r, header.config);
    out.push_back({std::move(a), std::move(ln1), std::move(ln2), std::move(fff)});
  }
  detail::expect_consumed(r, "UFBM");
  return EncoderModel<float>(h, heads, static_cast<double>(epsilon), std::move(out));
}

inline std::size_t save_ufbm(const EncoderModel<float>& model, const std::filesystem::path& path) {
  const auto bytes = encode_ufbm(model);
  detail::write_file(path, bytes);
  return bytes.size();
}

inline EncoderModel<float> load_ufbm(const std::filesystem::path& path) { return decode_ufbm(detail::read_file(path)); }

}  // namespace fff::io
