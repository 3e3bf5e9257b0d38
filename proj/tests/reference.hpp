#pragma once

// Straight-line double-precision references used only by tests. They are
// written from the defining formulas and call nothing in the engine except
// the weight containers.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "fff/fff.hpp"

namespace fff::testing {

using Dense = std::vector<std::vector<double>>;

template <typename T>
Dense to_dense(const Matrix<T>& m) {
  Dense d(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) d[r][c] = static_cast<double>(m(r, c));
  return d;
}

inline double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// result[i][j] = sum_k a[i][k] * b_t[j][k]
template <typename T>
Dense matmul_ref(const Matrix<T>& a, const Matrix<T>& b_t) {
  Dense out(a.rows(), std::vector<double>(b_t.rows(), 0.0));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b_t.rows(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k)
        out[i][j] += static_cast<double>(a(i, k)) * static_cast<double>(b_t(j, k));
  return out;
}

template <typename T>
Dense ff_ref(const Matrix<T>& x, const DenseLayerWeights<T>& w) {
  const std::size_t h = x.cols();
  Dense out(x.rows(), std::vector<double>(h, 0.0));
  for (std::size_t b = 0; b < x.rows(); ++b) {
    for (std::size_t n = 0; n < w.neurons(); ++n) {
      double z = w.has_input_bias() ? static_cast<double>(w.b_in()[n]) : 0.0;
      for (std::size_t i = 0; i < h; ++i) z += static_cast<double>(x(b, i)) * static_cast<double>(w.w_in()(n, i));
      const double a = gelu_ref(z);
      for (std::size_t i = 0; i < h; ++i) out[b][i] += a * static_cast<double>(w.w_out()(n, i));
    }
  }
  return out;
}

// Recursive walk of one tree for a single token, recomputing each logit.
template <typename T>
void descend_recursive(std::span<const T> x, const TreeWeights<T>& tree, std::size_t node, std::size_t levels_left,
                       std::vector<std::size_t>& path) {
  if (levels_left == 0) return;
  T logit{};
  for (std::size_t i = 0; i < x.size(); ++i) logit += x[i] * tree.w_in(node, i);
  if (!tree.b_in.empty()) logit += tree.b_in[node];
  path.push_back(node);
  descend_recursive(x, tree, logit > T{0} ? 2 * node + 2 : 2 * node + 1, levels_left - 1, path);
}

template <typename T>
double rel_diff(T actual, double expected) {
  const double a = static_cast<double>(actual);
  const double denom = std::max(std::abs(expected), 1e-300);
  return std::abs(a - expected) / denom;
}

template <typename T>
double max_rel_diff(const Matrix<T>& actual, const Dense& expected) {
  double worst = 0.0;
  for (std::size_t r = 0; r < actual.rows(); ++r)
    for (std::size_t c = 0; c < actual.cols(); ++c) worst = std::max(worst, rel_diff(actual(r, c), expected[r][c]));
  return worst;
}

template <typename T>
Dense layernorm_ref(const Dense& x, const LayerNormWeights<T>& ln, double eps) {
  Dense out = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double n = static_cast<double>(x[r].size());
    double mean = 0.0;
    for (double v : x[r]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[r]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t i = 0; i < x[r].size(); ++i)
      out[r][i] = (x[r][i] - mean) / std::sqrt(var + eps) * static_cast<double>(ln.scale[i]) +
                  static_cast<double>(ln.shift[i]);
  }
  return out;
}

template <typename T>
Dense linear_ref(const Dense& x, const Matrix<T>& w, const std::vector<T>& b) {
  Dense out(x.size(), std::vector<double>(w.rows(), 0.0));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double acc = static_cast<double>(b[o]);
      for (std::size_t i = 0; i < w.cols(); ++i) acc += x[r][i] * static_cast<double>(w(o, i));
      out[r][o] = acc;
    }
  return out;
}

// softmax(Q K^T / sqrt(d_head)) V per head, then the output projection.
template <typename T>
Dense attention_ref(const Dense& x, const AttentionWeights<T>& w) {
  const Dense q = linear_ref(x, w.w_q, w.b_q);
  const Dense k = linear_ref(x, w.w_k, w.b_k);
  const Dense v = linear_ref(x, w.w_v, w.b_v);
  const std::size_t seq = x.size();
  const std::size_t h = w.w_q.rows();
  const std::size_t dh = h / w.num_heads;
  Dense ctx(seq, std::vector<double>(h, 0.0));
  for (std::size_t head = 0; head < w.num_heads; ++head) {
    for (std::size_t i = 0; i < seq; ++i) {
      std::vector<double> s(seq);
      double denom = 0.0;
      for (std::size_t j = 0; j < seq; ++j) {
        double dotv = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dotv += q[i][head * dh + c] * k[j][head * dh + c];
        s[j] = std::exp(dotv / std::sqrt(static_cast<double>(dh)));
        denom += s[j];
      }
      for (std::size_t j = 0; j < seq; ++j)
        for (std::size_t c = 0; c < dh; ++c) ctx[i][head * dh + c] += s[j] / denom * v[j][head * dh + c];
    }
  }
  return linear_ref(ctx, w.w_o, w.b_o);
}

// Masked FFF in the reference's own words: every node's activation, with
// off-path nodes zeroed, times w_out.
template <typename T>
Dense fff_ref(const Dense& x, const FFFLayerWeights<T>& w) {
  const auto& cfg = w.config();
  Dense out(x.size(), std::vector<double>(cfg.hidden_dim, 0.0));
  for (const auto& t : w.trees()) {
    for (std::size_t b = 0; b < x.size(); ++b) {
      std::size_t node = 0;
      for (std::size_t d = 0; d < cfg.path_len(); ++d) {
        double z = cfg.has_input_bias ? static_cast<double>(t.b_in[node]) : 0.0;
        for (std::size_t i = 0; i < cfg.hidden_dim; ++i) z += x[b][i] * static_cast<double>(t.w_in(node, i));
        const double a = gelu_ref(z);
        for (std::size_t i = 0; i < cfg.hidden_dim; ++i) out[b][i] += a * static_cast<double>(t.w_out(node, i));
        node = z > 0 ? 2 * node + 2 : 2 * node + 1;
      }
    }
  }
  return out;
}

template <typename T>
Dense layer_ref(const Dense& x, const EncoderLayer<T>& layer, double eps) {
  const Dense att = attention_ref(layernorm_ref(x, layer.ln1, eps), layer.attention);
  Dense h1 = x;
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t i = 0; i < x[r].size(); ++i) h1[r][i] += att[r][i];
  const Dense f = fff_ref(layernorm_ref(h1, layer.ln2, eps), layer.intermediate);
  Dense out = h1;
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t i = 0; i < x[r].size(); ++i) out[r][i] += f[r][i];
  return out;
}

template <typename T>
Matrix<T> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  Matrix<T> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<T>(dist(rng));
  return m;
}

}  // namespace fff::testing
