#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <vector>

#include <unistd.h>

#include "fff/fff.hpp"
#include "reference.hpp"

namespace fff {
namespace {

namespace fs = std::filesystem;
using Bytes = std::vector<std::byte>;

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("fff_io_" + std::to_string(::getpid()) + "_" + name);
}

void put_u32(Bytes& b, std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[offset + i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

std::uint32_t get_u32(const Bytes& b, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::to_integer<std::uint32_t>(b[offset + i]) << (8 * i);
  return v;
}

// Overwrites a few scalars with NaNs carrying distinct payloads, plus infinities
// and a negative zero.
void plant_specials(std::span<float> xs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::uint32_t patterns[] = {0x7fc00001u, 0xffc12345u, 0x7f800001u, 0x7f800000u, 0xff800000u, 0x80000000u};
  for (const auto bits : patterns) {
    if (xs.empty()) return;
    xs[rng() % xs.size()] = std::bit_cast<float>(bits);
  }
}

template <typename T>
bool same_bits(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

bool same_fff(const FFFLayerWeights<float>& a, const FFFLayerWeights<float>& b) {
  if (!(a.config() == b.config())) return false;
  for (std::size_t k = 0; k < a.config().num_trees; ++k) {
    const auto &x = a.tree(k), &y = b.tree(k);
    if (!bitwise_equal(x.w_in, y.w_in) || !bitwise_equal(x.w_out, y.w_out)) return false;
    if (!same_bits<float>(x.b_in, y.b_in)) return false;
  }
  return true;
}

FFFLayerWeights<float> with_specials(const FFFLayerWeights<float>& w, std::uint64_t seed) {
  std::vector<TreeWeights<float>> trees(w.trees().begin(), w.trees().end());
  for (auto& t : trees) {
    plant_specials(t.w_in.data(), seed++);
    plant_specials(t.w_out.data(), seed++);
    plant_specials(t.b_in, seed++);
  }
  return FFFLayerWeights<float>(w.config(), std::move(trees));
}

TEST(Fffw, SmallestFileIs32Bytes) {
  const FFFLayerWeights<float> w({1, 1, 0, false}, {{Matrix<float>{{1.5f}}, {}, Matrix<float>{{-2.0f}}}});
  const auto bytes = io::encode_fffw(w);
  ASSERT_EQ(bytes.size(), 32u);
  EXPECT_EQ(std::memcmp(bytes.data(), "FFFW", 4), 0);
  EXPECT_EQ(get_u32(bytes, 4), 1u);   // version
  EXPECT_EQ(get_u32(bytes, 8), 0u);   // flags
  EXPECT_EQ(get_u32(bytes, 12), 1u);  // K
  EXPECT_EQ(get_u32(bytes, 16), 1u);  // P
  EXPECT_EQ(get_u32(bytes, 20), 1u);  // H
  EXPECT_EQ(get_u32(bytes, 24), std::bit_cast<std::uint32_t>(1.5f));
  EXPECT_EQ(get_u32(bytes, 28), std::bit_cast<std::uint32_t>(-2.0f));
}

TEST(Fffw, FullSizeFileLength) {
  const auto path = temp_path("full.fffw");
  const auto w = zero_fff_weights<float>({768, 1, 11, false});
  EXPECT_EQ(io::save_fffw(w, path), 24u + 2u * 4095 * 768 * 4);
  EXPECT_EQ(fs::file_size(path), 25159680u + 24u);
  fs::remove(path);
}

TEST(Fffw, PayloadOrderIsInBiasOut) {
  const FFFConfig cfg{2, 2, 1, true};
  const auto w = random_fff_weights<float>(cfg, 3);
  const auto bytes = io::encode_fffw(w);
  std::size_t off = 24;
  for (const auto& t : w.trees()) {
    for (const float v : t.w_in.data()) EXPECT_EQ(get_u32(bytes, (off += 4) - 4), std::bit_cast<std::uint32_t>(v));
    for (const float v : t.b_in) EXPECT_EQ(get_u32(bytes, (off += 4) - 4), std::bit_cast<std::uint32_t>(v));
    for (const float v : t.w_out.data()) EXPECT_EQ(get_u32(bytes, (off += 4) - 4), std::bit_cast<std::uint32_t>(v));
  }
  EXPECT_EQ(off, bytes.size());
  EXPECT_EQ(get_u32(bytes, 8), io::kFlagInputBias);
}

TEST(Fffw, RandomRoundTripsThroughFiles) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const FFFConfig cfg{1 + rng() % 12, 1 + rng() % 3, rng() % 5, rng() % 2 == 0};
    const auto w = with_specials(random_fff_weights<float>(cfg, rng()), rng());
    const auto path = temp_path("rt.fffw");
    io::save_fffw(w, path);
    EXPECT_TRUE(same_fff(io::load_fffw(path), w)) << cfg.name();
    fs::remove(path);
  }
}

TEST(Fffw, NegativeCases) {
  const auto good = io::encode_fffw(random_fff_weights<float>({3, 2, 2, true}, 5));
  auto bad = good;
  bad[0] = std::byte{'X'};
  EXPECT_THROW(io::decode_fffw(bad), FormatError);

  bad = good;
  put_u32(bad, 4, 2);
  EXPECT_THROW(io::decode_fffw(bad), VersionError);

  bad = good;
  put_u32(bad, 8, 6);
  EXPECT_THROW(io::decode_fffw(bad), FormatError);

  bad = good;
  put_u32(bad, 16, 0);
  EXPECT_THROW(io::decode_fffw(bad), FormatError);

  bad = good;
  put_u32(bad, 16, 40);
  EXPECT_THROW(io::decode_fffw(bad), FormatError);

  bad = good;
  put_u32(bad, 12, 0);
  EXPECT_THROW(io::decode_fffw(bad), FormatError);

  bad = good;
  bad.resize(bad.size() - 4);
  try {
    io::decode_fffw(bad);
    FAIL() << "expected LengthError";
  } catch (const LengthError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(good.size())), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(bad.size())), std::string::npos) << msg;
  }

  bad = good;
  bad.push_back(std::byte{0});
  EXPECT_THROW(io::decode_fffw(bad), LengthError);

  EXPECT_THROW(io::decode_fffw(std::span(good).first(10)), LengthError);

  // Huge declared sizes are refused before any allocation.
  bad = good;
  put_u32(bad, 12, 0xffffffffu);
  put_u32(bad, 16, 31);
  put_u32(bad, 20, 0xffffffffu);
  EXPECT_THROW(io::decode_fffw(bad), Error);
}

TEST(Fffw, MissingFileAndUnwritablePathNameThePath) {
  try {
    io::load_fffw("/nonexistent/dir/w.fffw");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/w.fffw"), std::string::npos);
  }
  EXPECT_THROW(io::save_fffw(zero_fff_weights<float>({1, 1, 0, false}), "/nonexistent/dir/w.fffw"), IoError);
}

TEST(Acts, EmptyMatrixIsSixteenBytes) {
  const Matrix<float> empty(0, 8);
  const auto bytes = io::encode_acts(empty);
  EXPECT_EQ(bytes.size(), 16u);
  const auto back = io::decode_acts(bytes);
  EXPECT_EQ(back.rows(), 0u);
  EXPECT_EQ(back.cols(), 8u);
}

TEST(Acts, RandomRoundTripsThroughFiles) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = testing::random_matrix<float>(rng() % 9, 1 + rng() % 9, rng());
    plant_specials(m.data(), rng());
    const auto path = temp_path("rt.acts");
    EXPECT_EQ(io::save_acts(m, path), 16 + 4 * m.size());
    const auto back = io::load_acts(path);
    EXPECT_EQ(back.rows(), m.rows());
    EXPECT_TRUE(bitwise_equal(back, m));
    fs::remove(path);
  }
}

TEST(Acts, NegativeCases) {
  const auto good = io::encode_acts(testing::random_matrix<float>(3, 4, 7));
  auto bad = good;
  std::memcpy(bad.data(), "ACTZ", 4);
  EXPECT_THROW(io::decode_acts(bad), FormatError);
  bad = good;
  put_u32(bad, 4, 0);
  EXPECT_THROW(io::decode_acts(bad), VersionError);
  bad = good;
  bad.resize(bad.size() - 4);
  EXPECT_THROW(io::decode_acts(bad), LengthError);
  EXPECT_THROW(io::decode_acts(Bytes(3)), LengthError);
}

TEST(Ufbm, EmptyModelIsIdentity) {
  const EncoderModel<float> model(8, 2, 1e-12, {});
  const auto back = io::decode_ufbm(io::encode_ufbm(model));
  EXPECT_EQ(back.layers().size(), 0u);
  EXPECT_EQ(back.hidden_dim(), 8u);
  const auto x = testing::random_matrix<float>(3, 8, 8);
  EXPECT_TRUE(bitwise_equal(model_forward(x, back, KernelLevel::dot), x));
}

TEST(Ufbm, RandomTwoLayerRoundTrip) {
  auto model = random_encoder_model<float>(2, 8, 2, {8, 2, 2, true}, 9);
  std::vector<EncoderLayer<float>> layers(model.layers().begin(), model.layers().end());
  std::uint64_t seed = 10;
  for (auto& l : layers) {
    plant_specials(l.attention.w_k.data(), seed++);
    plant_specials(l.ln2.shift, seed++);
    l.intermediate = with_specials(l.intermediate, seed++);
  }
  model = EncoderModel<float>(8, 2, 1e-12, std::move(layers));
  const auto path = temp_path("rt.ufbm");
  io::save_ufbm(model, path);
  const auto back = io::load_ufbm(path);
  fs::remove(path);
  ASSERT_EQ(back.layers().size(), 2u);
  EXPECT_EQ(back.num_heads(), 2u);
  EXPECT_EQ(static_cast<float>(back.layernorm_epsilon()), 1e-12f);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto &a = model.layers()[l], &b = back.layers()[l];
    const auto &x = a.attention, &y = b.attention;
    EXPECT_TRUE(bitwise_equal(x.w_q, y.w_q) && bitwise_equal(x.w_k, y.w_k) && bitwise_equal(x.w_v, y.w_v) &&
                bitwise_equal(x.w_o, y.w_o));
    EXPECT_TRUE(same_bits<float>(x.b_q, y.b_q) && same_bits<float>(x.b_k, y.b_k) && same_bits<float>(x.b_v, y.b_v) &&
                same_bits<float>(x.b_o, y.b_o));
    EXPECT_TRUE(same_bits<float>(a.ln1.scale, b.ln1.scale) && same_bits<float>(a.ln1.shift, b.ln1.shift));
    EXPECT_TRUE(same_bits<float>(a.ln2.scale, b.ln2.scale) && same_bits<float>(a.ln2.shift, b.ln2.shift));
    EXPECT_TRUE(same_fff(a.intermediate, b.intermediate));
  }
  EXPECT_EQ(io::encode_ufbm(back), io::encode_ufbm(model));
}

TEST(Ufbm, NegativeCases) {
  const auto good = io::encode_ufbm(random_encoder_model<float>(1, 4, 2, {4, 1, 1, true}, 11));
  auto bad = good;
  bad[3] = std::byte{'X'};
  EXPECT_THROW(io::decode_ufbm(bad), FormatError);
  bad = good;
  put_u32(bad, 4, 9);
  EXPECT_THROW(io::decode_ufbm(bad), VersionError);
  bad = good;
  put_u32(bad, 16, 3);  // heads do not divide H
  EXPECT_THROW(io::decode_ufbm(bad), FormatError);
  bad = good;
  bad.resize(bad.size() - 4);
  EXPECT_THROW(io::decode_ufbm(bad), LengthError);
  bad = good;
  bad.push_back(std::byte{1});
  EXPECT_THROW(io::decode_ufbm(bad), LengthError);

  // Embedded block with a hidden size other than the container's.
  const std::size_t fffw_at = 24 + 4 * (4 * 16 + 8 * 4);
  ASSERT_EQ(std::memcmp(good.data() + fffw_at, "FFFW", 4), 0);
  bad = good;
  put_u32(bad, fffw_at + 20, 5);
  EXPECT_THROW(io::decode_ufbm(bad), FormatError);
  bad = good;
  bad[fffw_at] = std::byte{'G'};
  EXPECT_THROW(io::decode_ufbm(bad), FormatError);
}

TEST(Ufbm, LoadedModelRunsLikeTheOriginal) {
  const auto model = random_encoder_model<float>(2, 8, 2, {8, 2, 2, true}, 12);
  const auto back = io::decode_ufbm(io::encode_ufbm(model));
  const auto x = testing::random_matrix<float>(3, 8, 13);
  EXPECT_TRUE(bitwise_equal(model_forward(x, back, KernelLevel::dot), model_forward(x, model, KernelLevel::dot)));
}

}  // namespace
}  // namespace fff
