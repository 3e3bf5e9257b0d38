#pragma once

// Masked-dense reference for FFF layers. Every neuron of every tree is
// evaluated densely in double precision, each token's path is recovered by
// walking the dense logits, all off-path activations are zeroed, and the full
// output projection is applied. No code is shared with the kernel levels
// beyond the weight containers and the GeLU definition.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "fff/engine.hpp"
#include "fff/tensor.hpp"
#include "fff/weights.hpp"

namespace fff {

// Reference output together with a per-element error scale. magnitude(b, j)
// sums, over the engaged neurons, (|gelu(L)| + sum_i |x_i w_in_i| + |bias|) *
// |w_out_j|: the quantity that rounding errors in the logits and in the
// output accumulation are proportional to. Dividing |kernel - oracle| by it
// gives a relative error that stays meaningful when the output cancels.
struct OracleResult {
  Matrix<double> values;
  Matrix<double> magnitude;
};

template <typename T>
OracleResult masked_dense_oracle_with_scale(const Matrix<T>& input, const FFFLayerWeights<T>& weights) {
  const auto& cfg = weights.config();
  if (input.cols() != cfg.hidden_dim) {
    throw DimensionError("masked_dense_oracle: input is " + input.shape() + " but the layer expects " +
                         std::to_string(cfg.hidden_dim) + " columns");
  }
  const std::size_t batch = input.rows();
  const std::size_t h = cfg.hidden_dim;
  const std::size_t nodes = cfg.nodes_per_tree();
  const std::size_t depth = cfg.path_len();

  Matrix<double> out(batch, h);
  Matrix<double> magnitude(batch, h);
  std::vector<double> logits(nodes);
  std::vector<double> spread(nodes);
  std::vector<double> mask(nodes);
  for (std::size_t k = 0; k < cfg.num_trees; ++k) {
    const auto& t = weights.tree(k);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t n = 0; n < nodes; ++n) {
        double acc = 0.0;
        double abs_acc = 0.0;
        for (std::size_t i = 0; i < h; ++i) {
          const double term = static_cast<double>(input(b, i)) * static_cast<double>(t.w_in(n, i));
          acc += term;
          abs_acc += std::abs(term);
        }
        if (cfg.has_input_bias) {
          acc += static_cast<double>(t.b_in[n]);
          abs_acc += std::abs(static_cast<double>(t.b_in[n]));
        }
        logits[n] = acc;
        spread[n] = abs_acc;
      }
      std::fill(mask.begin(), mask.end(), 0.0);
      std::size_t node = 0;
      for (std::size_t d = 0; d < depth; ++d) {
        mask[node] = 1.0;
        node = logits[node] > 0.0 ? 2 * node + 2 : 2 * node + 1;
      }
      for (std::size_t n = 0; n < nodes; ++n) {
        const double a = mask[n] * gelu(logits[n]);
        const double scale = mask[n] * (std::abs(gelu(logits[n])) + spread[n]);
        for (std::size_t i = 0; i < h; ++i) {
          const double w = static_cast<double>(t.w_out(n, i));
          out(b, i) += a * w;
          magnitude(b, i) += scale * std::abs(w);
        }
      }
    }
  }
  return {std::move(out), std::move(magnitude)};
}

template <typename T>
Matrix<double> masked_dense_oracle(const Matrix<T>& input, const FFFLayerWeights<T>& weights) {
  return masked_dense_oracle_with_scale(input, weights).values;
}

// max over elements of |actual - oracle| / magnitude; elements whose
// magnitude is zero must match exactly or count as infinite deviation.
template <typename T>
double scaled_deviation(const Matrix<T>& actual, const OracleResult& oracle) {
  if (actual.rows() != oracle.values.rows() || actual.cols() != oracle.values.cols()) {
    throw DimensionError("scaled_deviation: shapes " + actual.shape() + " and " + oracle.values.shape() + " differ");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double diff = std::abs(static_cast<double>(actual.data()[i]) - oracle.values.data()[i]);
    const double scale = oracle.magnitude.data()[i];
    if (diff == 0.0) continue;
    worst = std::max(worst, scale > 0.0 ? diff / scale : std::numeric_limits<double>::infinity());
  }
  return worst;
}

}  // namespace fff
