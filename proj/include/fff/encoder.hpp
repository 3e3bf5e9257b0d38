#pragma once

// Minimal transformer encoder whose intermediate (feedforward) sublayers are
// FFF layers. Blocks are pre-norm residual:
//
//   h1  = x  + attention(layernorm(x,  ln1))
//   out = h1 + fff(layernorm(h1, ln2))
//
// Projection matrices follow the usual linear-layer storage, [out][in], so
// y = x * W^T + b. There is no attention mask: the batch is one sequence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fff/engine.hpp"
#include "fff/errors.hpp"
#include "fff/tensor.hpp"
#include "fff/weights.hpp"

namespace fff {

inline constexpr double kDefaultLayerNormEpsilon = 1e-12;

template <typename T>
struct AttentionWeights {
  Matrix<T> w_q, w_k, w_v, w_o;      // H x H, [out][in]
  std::vector<T> b_q, b_k, b_v, b_o;  // H
  std::size_t num_heads = 1;

  std::size_t hidden_dim() const noexcept { return w_q.rows(); }

  void validate(std::size_t h) const {
    for (const auto* m : {&w_q, &w_k, &w_v, &w_o}) {
      if (m->rows() != h || m->cols() != h)
        throw DimensionError("attention: projection is " + m->shape() + ", expected " + shape_string(h, h));
    }
    for (const auto* v : {&b_q, &b_k, &b_v, &b_o}) {
      if (v->size() != h) throw DimensionError("attention: bias has " + std::to_string(v->size()) + " entries, expected " + std::to_string(h));
    }
    if (num_heads == 0 || h % num_heads != 0) {
      throw DimensionError("attention: hidden size " + std::to_string(h) + " is not divisible by " +
                           std::to_string(num_heads) + " heads");
    }
  }

  template <typename U>
  AttentionWeights<U> cast() const {
    auto v = [](const std::vector<T>& x) { return std::vector<U>(x.begin(), x.end()); };
    return {w_q.template cast<U>(), w_k.template cast<U>(), w_v.template cast<U>(), w_o.template cast<U>(),
            v(b_q), v(b_k), v(b_v), v(b_o), num_heads};
  }
};

template <typename T>
struct LayerNormWeights {
  std::vector<T> scale;
  std::vector<T> shift;

  template <typename U>
  LayerNormWeights<U> cast() const {
    return {std::vector<U>(scale.begin(), scale.end()), std::vector<U>(shift.begin(), shift.end())};
  }
};

template <typename T>
struct EncoderLayer {
  AttentionWeights<T> attention;
  LayerNormWeights<T> ln1;
  LayerNormWeights<T> ln2;
  FFFLayerWeights<T> intermediate;

  void validate(std::size_t h) const {
    attention.validate(h);
    for (const auto* ln : {&ln1, &ln2}) {
      if (ln->scale.size() != h || ln->shift.size() != h)
        throw DimensionError("layernorm parameters must have " + std::to_string(h) + " entries");
    }
    if (intermediate.config().hidden_dim != h) {
      throw DimensionError("intermediate layer hidden size " + std::to_string(intermediate.config().hidden_dim) +
                           " differs from the encoder's " + std::to_string(h));
    }
  }

  template <typename U>
  EncoderLayer<U> cast() const {
    return {attention.template cast<U>(), ln1.template cast<U>(), ln2.template cast<U>(),
            intermediate.template cast<U>()};
  }
};

template <typename T>
class EncoderModel {
 public:
  using value_type = T;

  EncoderModel(std::size_t hidden_dim, std::size_t num_heads, double layernorm_epsilon,
               std::vector<EncoderLayer<T>> layers)
      : hidden_dim_(hidden_dim), num_heads_(num_heads), epsilon_(layernorm_epsilon), layers_(std::move(layers)) {
    if (num_heads_ == 0 || (hidden_dim_ != 0 && hidden_dim_ % num_heads_ != 0)) {
      throw DimensionError("encoder: hidden size " + std::to_string(hidden_dim_) + " is not divisible by " +
                           std::to_string(num_heads_) + " heads");
    }
    for (const auto& layer : layers_) {
      layer.validate(hidden_dim_);
      if (layer.attention.num_heads != num_heads_) throw DimensionError("encoder: layers disagree on head count");
    }
  }

  std::size_t hidden_dim() const noexcept { return hidden_dim_; }
  std::size_t num_heads() const noexcept { return num_heads_; }
  double layernorm_epsilon() const noexcept { return epsilon_; }
  std::span<const EncoderLayer<T>> layers() const noexcept { return layers_; }

  template <typename U>
  EncoderModel<U> cast() const {
    std::vector<EncoderLayer<U>> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(l.template cast<U>());
    return EncoderModel<U>(hidden_dim_, num_heads_, epsilon_, std::move(out));
  }

 private:
  std::size_t hidden_dim_;
  std::size_t num_heads_;
  double epsilon_;
  std::vector<EncoderLayer<T>> layers_;
};

// Seeded tiny-to-mid models for tests and benchmarks: projections and biases
// ~ N(0, 1/H), layernorm scale ~ 1 + N(0, 0.01), shift ~ N(0, 0.01).
template <typename T>
EncoderModel<T> random_encoder_model(std::size_t layers, std::size_t hidden_dim, std::size_t num_heads,
                                     const FFFConfig& intermediate, std::uint64_t seed) {
  if (intermediate.hidden_dim != hidden_dim) {
    throw DimensionError("random_encoder_model: intermediate hidden size differs from the model's");
  }
  std::mt19937_64 rng(seed);
  const float scale = detail::init_scale(hidden_dim);
  std::vector<EncoderLayer<T>> out;
  for (std::size_t l = 0; l < layers; ++l) {
    AttentionWeights<T> a;
    a.num_heads = num_heads;
    a.w_q = detail::normal_matrix<T>(rng, hidden_dim, hidden_dim, scale);
    a.w_k = detail::normal_matrix<T>(rng, hidden_dim, hidden_dim, scale);
    a.w_v = detail::normal_matrix<T>(rng, hidden_dim, hidden_dim, scale);
    a.w_o = detail::normal_matrix<T>(rng, hidden_dim, hidden_dim, scale);
    a.b_q = detail::normal_vector<T>(rng, hidden_dim, scale);
    a.b_k = detail::normal_vector<T>(rng, hidden_dim, scale);
    a.b_v = detail::normal_vector<T>(rng, hidden_dim, scale);
    a.b_o = detail::normal_vector<T>(rng, hidden_dim, scale);
    auto norm = [&] {
      LayerNormWeights<T> ln{detail::normal_vector<T>(rng, hidden_dim, 0.1f),
                             detail::normal_vector<T>(rng, hidden_dim, 0.1f)};
      for (auto& v : ln.scale) v += T(1);
      return ln;
    };
    auto ln1 = norm();
    auto ln2 = norm();
    out.push_back({std::move(a), std::move(ln1), std::move(ln2), random_fff_weights<T>(intermediate, rng())});
  }
  return EncoderModel<T>(hidden_dim, num_heads, kDefaultLayerNormEpsilon, std::move(out));
}

template <typename T>
Matrix<T> layernorm(const Matrix<T>& x, const LayerNormWeights<T>& ln, double epsilon) {
  const std::size_t h = x.cols();
  if (ln.scale.size() != h || ln.shift.size() != h) throw DimensionError("layernorm: parameter length mismatch");
  Matrix<T> out(x.rows(), h);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    T mean{};
    for (const T v : row) mean += v;
    mean /= static_cast<T>(h);
    T var{};
    for (const T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(h);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(epsilon));
    auto o = out.row(r);
    for (std::size_t i = 0; i < h; ++i) o[i] = (row[i] - mean) * inv * ln.scale[i] + ln.shift[i];
  }
  return out;
}

namespace detail {

template <typename T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, const std::vector<T>& b) {
  Matrix<T> y = matmul(x, w);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] += b[i];
  }
  return y;
}

}  // namespace detail

// Scaled dot-product multi-head self-attention over the whole batch as one
// sequence.
template <typename T>
Matrix<T> attention_forward(const Matrix<T>& hidden, const AttentionWeights<T>& w) {
  const std::size_t h = hidden.cols();
  if (w.hidden_dim() != h) {
    throw DimensionError("attention_forward: input is " + hidden.shape() + " but weights are for hidden size " +
                         std::to_string(w.hidden_dim()));
  }
  w.validate(h);
  const std::size_t seq = hidden.rows();
  const std::size_t heads = w.num_heads;
  const std::size_t dh = h / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  const Matrix<T> q = detail::linear(hidden, w.w_q, w.b_q);
  const Matrix<T> k = detail::linear(hidden, w.w_k, w.b_k);
  const Matrix<T> v = detail::linear(hidden, w.w_v, w.b_v);

  Matrix<T> context(seq, h);
  std::vector<T> p(seq);
  for (std::size_t head = 0; head < heads; ++head) {
    const std::size_t off = head * dh;
    for (std::size_t i = 0; i < seq; ++i) {
      const auto qi = q.row(i).subspan(off, dh);
      T max_score = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < seq; ++j) {
        p[j] = dot<T>(qi, k.row(j).subspan(off, dh)) * scale;
        max_score = std::max(max_score, p[j]);
      }
      T denom{};
      for (std::size_t j = 0; j < seq; ++j) {
        p[j] = std::exp(p[j] - max_score);
        denom += p[j];
      }
      auto ci = context.row(i).subspan(off, dh);
      for (std::size_t j = 0; j < seq; ++j) axpy<T>(p[j] / denom, v.row(j).subspan(off, dh), ci);
    }
  }
  return detail::linear(context, w.w_o, w.b_o);
}

template <typename T>
Matrix<T> layer_forward_traced(const Matrix<T>& hidden, const EncoderLayer<T>& layer, double layernorm_epsilon,
                               KernelLevel level, std::vector<PathTrace<T>>& traces, std::size_t threads = 1) {
  Matrix<T> h1 = attention_forward(layernorm(hidden, layer.ln1, layernorm_epsilon), layer.attention);
  for (std::size_t i = 0; i < h1.size(); ++i) h1.data()[i] += hidden.data()[i];
  Matrix<T> out = fff_forward_traced(layernorm(h1, layer.ln2, layernorm_epsilon), layer.intermediate, level,
                                     traces, threads);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += h1.data()[i];
  return out;
}

template <typename T>
Matrix<T> layer_forward(const Matrix<T>& hidden, const EncoderLayer<T>& layer, KernelLevel level,
                        double layernorm_epsilon = kDefaultLayerNormEpsilon, std::size_t threads = 1) {
  std::vector<PathTrace<T>> traces;
  return layer_forward_traced(hidden, layer, layernorm_epsilon, level, traces, threads);
}

// Runs every layer in order. When `traces` is non-null it receives, per layer,
// the path traces of that layer's trees.
template <typename T>
Matrix<T> model_forward(const Matrix<T>& hidden, const EncoderModel<T>& model, KernelLevel level,
                        std::size_t threads = 1, std::vector<std::vector<PathTrace<T>>>* traces = nullptr) {
  if (hidden.cols() != model.hidden_dim()) {
    throw DimensionError("model_forward: input is " + hidden.shape() + " but the model hidden size is " +
                         std::to_string(model.hidden_dim()));
  }
  if (traces) traces->clear();
  Matrix<T> x = hidden;
  for (const auto& layer : model.layers()) {
    std::vector<PathTrace<T>> layer_traces;
    x = layer_forward_traced(x, layer, model.layernorm_epsilon(), level, layer_traces, threads);
    if (traces) traces->push_back(std::move(layer_traces));
  }
  return x;
}

}  // namespace fff
