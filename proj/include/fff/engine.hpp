#pragma once

// Conditional matrix multiplication (tree descent) and the FFF / dense FF
// forward passes at three kernel levels:
//
//   naive    scalar loops over raw weight storage
//   dot      one vector dot product (and one scaled vector add) per node
//   batched  per depth, gather the selected weight rows for a block of tokens
//            and run the block's products together
//
// All levels reduce over H left to right from zero, add the input bias after
// the reduction, and accumulate outputs tree by tree then depth by depth, so
// they agree bitwise in a given precision.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fff/errors.hpp"
#include "fff/parallel.hpp"
#include "fff/tensor.hpp"
#include "fff/weights.hpp"

namespace fff {

enum class KernelLevel { naive, dot, batched };

inline constexpr std::array<KernelLevel, 3> kAllLevels{KernelLevel::naive, KernelLevel::dot, KernelLevel::batched};

inline std::string to_string(KernelLevel level) {
  switch (level) {
    case KernelLevel::naive: return "naive";
    case KernelLevel::dot: return "dot";
    case KernelLevel::batched: return "batched";
  }
  return "?";
}

inline KernelLevel parse_kernel_level(const std::string& s) {
  if (s == "naive") return KernelLevel::naive;
  if (s == "dot") return KernelLevel::dot;
  if (s == "batched") return KernelLevel::batched;
  throw UsageError("unknown kernel level '" + s + "' (expected naive, dot or batched)");
}

using NodeIndex = std::uint32_t;

// Result of descending one tree: for token b and level d, nodes(b, d) is the
// node visited and logits(b, d) its pre-activation.
template <typename T>
struct PathTrace {
  Matrix<NodeIndex> nodes;
  Matrix<T> logits;
};

namespace detail {

// Tokens per block in the batched level.
inline constexpr std::size_t kBatchBlock = 64;

inline NodeIndex child(NodeIndex node, bool right) noexcept { return 2 * node + 1 + (right ? 1 : 0); }

template <typename T>
void check_input(const Matrix<T>& input, std::size_t hidden_dim, const char* op) {
  if (input.cols() != hidden_dim) {
    throw DimensionError(std::string(op) + ": input is " + input.shape() + " but the layer expects " +
                         std::to_string(hidden_dim) + " columns");
  }
}

template <typename T>
void descend_naive(const Matrix<T>& input, const TreeWeights<T>& tree, PathTrace<T>& trace, std::size_t b0,
                   std::size_t b1) {
  const std::size_t h = input.cols();
  const std::size_t depth = trace.nodes.cols();
  const T* w = tree.w_in.data().data();
  const bool bias = !tree.b_in.empty();
  for (std::size_t b = b0; b < b1; ++b) {
    const T* x = input.data().data() + b * h;
    NodeIndex node = 0;
    for (std::size_t d = 0; d < depth; ++d) {
      const T* wr = w + static_cast<std::size_t>(node) * h;
      T acc{};
      for (std::size_t i = 0; i < h; ++i) acc += x[i] * wr[i];
      if (bias) acc += tree.b_in[node];
      trace.nodes(b, d) = node;
      trace.logits(b, d) = acc;
      node = child(node, acc > T{0});
    }
  }
}

template <typename T>
void descend_dot(const Matrix<T>& input, const TreeWeights<T>& tree, PathTrace<T>& trace, std::size_t b0,
                 std::size_t b1) {
  const std::size_t depth = trace.nodes.cols();
  const bool bias = !tree.b_in.empty();
  for (std::size_t b = b0; b < b1; ++b) {
    const auto x = input.row(b);
    NodeIndex node = 0;
    for (std::size_t d = 0; d < depth; ++d) {
      T logit = dot<T>(x, tree.w_in.row(node));
      if (bias) logit += tree.b_in[node];
      trace.nodes(b, d) = node;
      trace.logits(b, d) = logit;
      node = child(node, logit > T{0});
    }
  }
}

// out[i] = dot(a.row(a0 + i), g.row(i)) for i < count, eight rows at a time.
template <typename T>
void rowwise_dot(const Matrix<T>& a, std::size_t a0, const Matrix<T>& g, std::size_t count, std::span<T> out) {
  constexpr std::size_t kLanes = 8;
  const std::size_t h = a.cols();
  std::size_t i = 0;
  for (; i + kLanes <= count; i += kLanes) {
    std::array<T, kLanes> acc{};
    std::array<const T*, kLanes> x{};
    std::array<const T*, kLanes> w{};
    for (std::size_t l = 0; l < kLanes; ++l) {
      x[l] = a.row(a0 + i + l).data();
      w[l] = g.row(i + l).data();
    }
    for (std::size_t c = 0; c < h; ++c)
      for (std::size_t l = 0; l < kLanes; ++l) acc[l] += x[l][c] * w[l][c];
    for (std::size_t l = 0; l < kLanes; ++l) out[i + l] = acc[l];
  }
  for (; i < count; ++i) out[i] = dot<T>(a.row(a0 + i), g.row(i));
}

template <typename T>
void descend_batched(const Matrix<T>& input, const TreeWeights<T>& tree, PathTrace<T>& trace, std::size_t b0,
                     std::size_t b1) {
  const std::size_t depth = trace.nodes.cols();
  const bool bias = !tree.b_in.empty();
  Matrix<T> gathered;
  std::vector<NodeIndex> current;
  std::vector<T> logits;
  for (std::size_t c0 = b0; c0 < b1; c0 += kBatchBlock) {
    const std::size_t n = std::min(kBatchBlock, b1 - c0);
    current.assign(n, 0);
    logits.resize(n);
    for (std::size_t d = 0; d < depth; ++d) {
      gather_rows_into(tree.w_in, std::span<const NodeIndex>(current), gathered);
      rowwise_dot(input, c0, gathered, n, std::span<T>(logits));
      for (std::size_t i = 0; i < n; ++i) {
        if (bias) logits[i] += tree.b_in[current[i]];
        trace.nodes(c0 + i, d) = current[i];
        trace.logits(c0 + i, d) = logits[i];
        current[i] = child(current[i], logits[i] > T{0});
      }
    }
  }
}

template <typename T>
void accumulate_naive(const PathTrace<T>& trace, const TreeWeights<T>& tree, Matrix<T>& out, std::size_t b0,
                      std::size_t b1) {
  const std::size_t h = out.cols();
  const std::size_t depth = trace.nodes.cols();
  const T* w = tree.w_out.data().data();
  for (std::size_t b = b0; b < b1; ++b) {
    T* o = out.data().data() + b * h;
    for (std::size_t d = 0; d < depth; ++d) {
      const T a = gelu(trace.logits(b, d));
      const T* wr = w + static_cast<std::size_t>(trace.nodes(b, d)) * h;
      for (std::size_t i = 0; i < h; ++i) o[i] += a * wr[i];
    }
  }
}

template <typename T>
void accumulate_dot(const PathTrace<T>& trace, const TreeWeights<T>& tree, Matrix<T>& out, std::size_t b0,
                    std::size_t b1) {
  const std::size_t depth = trace.nodes.cols();
  for (std::size_t b = b0; b < b1; ++b)
    for (std::size_t d = 0; d < depth; ++d)
      axpy<T>(gelu(trace.logits(b, d)), tree.w_out.row(trace.nodes(b, d)), out.row(b));
}

template <typename T>
void accumulate_batched(const PathTrace<T>& trace, const TreeWeights<T>& tree, Matrix<T>& out, std::size_t b0,
                        std::size_t b1) {
  const std::size_t depth = trace.nodes.cols();
  const std::size_t h = out.cols();
  Matrix<T> gathered;
  std::vector<NodeIndex> selected;
  std::vector<T> act;
  for (std::size_t c0 = b0; c0 < b1; c0 += kBatchBlock) {
    const std::size_t n = std::min(kBatchBlock, b1 - c0);
    selected.resize(n);
    act.resize(n);
    for (std::size_t d = 0; d < depth; ++d) {
      for (std::size_t i = 0; i < n; ++i) {
        selected[i] = trace.nodes(c0 + i, d);
        act[i] = gelu(trace.logits(c0 + i, d));
      }
      gather_rows_into(tree.w_out, std::span<const NodeIndex>(selected), gathered);
      for (std::size_t i = 0; i < n; ++i) {
        T* o = out.row(c0 + i).data();
        const T* g = gathered.row(i).data();
        const T a = act[i];
        for (std::size_t j = 0; j < h; ++j) o[j] += a * g[j];
      }
    }
  }
}

template <typename T>
void descend_range(KernelLevel level, const Matrix<T>& input, const TreeWeights<T>& tree, PathTrace<T>& trace,
                   std::size_t b0, std::size_t b1) {
  switch (level) {
    case KernelLevel::naive: descend_naive(input, tree, trace, b0, b1); break;
    case KernelLevel::dot: descend_dot(input, tree, trace, b0, b1); break;
    case KernelLevel::batched: descend_batched(input, tree, trace, b0, b1); break;
  }
}

template <typename T>
void accumulate_range(KernelLevel level, const PathTrace<T>& trace, const TreeWeights<T>& tree, Matrix<T>& out,
                      std::size_t b0, std::size_t b1) {
  switch (level) {
    case KernelLevel::naive: accumulate_naive(trace, tree, out, b0, b1); break;
    case KernelLevel::dot: accumulate_dot(trace, tree, out, b0, b1); break;
    case KernelLevel::batched: accumulate_batched(trace, tree, out, b0, b1); break;
  }
}

}  // namespace detail

// Descends tree `tree` for every input row. The root is node 0; after
// computing logit L at node i a token moves to 2i+1 when L <= 0 and to 2i+2
// when L > 0. The branch taken at the last level is never materialized.
template <typename T>
PathTrace<T> cmm_descend(const Matrix<T>& input, const FFFLayerWeights<T>& weights, std::size_t tree,
                         KernelLevel level, std::size_t threads = 1) {
  const auto& cfg = weights.config();
  detail::check_input(input, cfg.hidden_dim, "cmm_descend");
  const auto& tw = weights.tree(tree);
  PathTrace<T> trace{Matrix<NodeIndex>(input.rows(), cfg.path_len()), Matrix<T>(input.rows(), cfg.path_len())};
  parallel_for(input.rows(), threads,
               [&](std::size_t b0, std::size_t b1) { detail::descend_range(level, input, tw, trace, b0, b1); });
  return trace;
}

// FFF forward that also hands back the per-tree path traces.
template <typename T>
Matrix<T> fff_forward_traced(const Matrix<T>& input, const FFFLayerWeights<T>& weights, KernelLevel level,
                             std::vector<PathTrace<T>>& traces, std::size_t threads = 1) {
  const auto& cfg = weights.config();
  detail::check_input(input, cfg.hidden_dim, "fff_forward");
  Matrix<T> out(input.rows(), cfg.hidden_dim);
  traces.clear();
  traces.reserve(cfg.num_trees);
  for (std::size_t k = 0; k < cfg.num_trees; ++k) {
    const auto& tw = weights.tree(k);
    PathTrace<T> trace{Matrix<NodeIndex>(input.rows(), cfg.path_len()), Matrix<T>(input.rows(), cfg.path_len())};
    parallel_for(input.rows(), threads, [&](std::size_t b0, std::size_t b1) {
      detail::descend_range(level, input, tw, trace, b0, b1);
      detail::accumulate_range(level, trace, tw, out, b0, b1);
    });
    traces.push_back(std::move(trace));
  }
  return out;
}

// output[b] = sum over trees k, levels d of gelu(L_k[b][d]) * w_out_k.row(N_k[b][d]).
template <typename T>
Matrix<T> fff_forward(const Matrix<T>& input, const FFFLayerWeights<T>& weights, KernelLevel level,
                      std::size_t threads = 1) {
  std::vector<PathTrace<T>> traces;
  return fff_forward_traced(input, weights, level, traces, threads);
}

namespace detail {

template <typename T>
void ff_naive(const Matrix<T>& input, const DenseLayerWeights<T>& w, Matrix<T>& out, std::size_t b0,
              std::size_t b1) {
  const std::size_t h = input.cols();
  const std::size_t n = w.neurons();
  const T* wi = w.w_in().data().data();
  const T* wo = w.w_out().data().data();
  const bool bias = w.has_input_bias();
  for (std::size_t b = b0; b < b1; ++b) {
    const T* x = input.data().data() + b * h;
    T* o = out.data().data() + b * h;
    for (std::size_t j = 0; j < n; ++j) {
      T acc{};
      for (std::size_t i = 0; i < h; ++i) acc += x[i] * wi[j * h + i];
      if (bias) acc += w.b_in()[j];
      const T a = gelu(acc);
      for (std::size_t i = 0; i < h; ++i) o[i] += a * wo[j * h + i];
    }
  }
}

template <typename T>
void ff_dot(const Matrix<T>& input, const DenseLayerWeights<T>& w, Matrix<T>& out, std::size_t b0, std::size_t b1) {
  const bool bias = w.has_input_bias();
  for (std::size_t b = b0; b < b1; ++b) {
    const auto x = input.row(b);
    for (std::size_t j = 0; j < w.neurons(); ++j) {
      T logit = dot<T>(x, w.w_in().row(j));
      if (bias) logit += w.b_in()[j];
      axpy<T>(gelu(logit), w.w_out().row(j), out.row(b));
    }
  }
}

// Dense blocks: a tiled logit block for kBatchBlock tokens against every
// neuron, then each output row of w_out is applied to the whole block.
template <typename T>
void ff_batched(const Matrix<T>& input, const DenseLayerWeights<T>& w, Matrix<T>& out, std::size_t b0,
                std::size_t b1) {
  const std::size_t n = w.neurons();
  const std::size_t h = input.cols();
  const bool bias = w.has_input_bias();
  Matrix<T> block(std::min(kBatchBlock, b1 - b0), n);
  std::vector<T> pack;
  for (std::size_t c0 = b0; c0 < b1; c0 += kBatchBlock) {
    const std::size_t rows = std::min(kBatchBlock, b1 - c0);
    gemm_nt_rows(input, c0, rows, w.w_in(), block, 0, pack);
    for (std::size_t i = 0; i < rows; ++i) {
      auto lr = block.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        T v = lr[j];
        if (bias) v += w.b_in()[j];
        lr[j] = gelu(v);
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      const T* wr = w.w_out().row(j).data();
      for (std::size_t i = 0; i < rows; ++i) {
        const T a = block(i, j);
        T* o = out.row(c0 + i).data();
        for (std::size_t c = 0; c < h; ++c) o[c] += a * wr[c];
      }
    }
  }
}

}  // namespace detail

// output = gelu(input * w_in^T + b_in) * w_out with every neuron engaged.
template <typename T>
Matrix<T> ff_forward(const Matrix<T>& input, const DenseLayerWeights<T>& weights, KernelLevel level,
                     std::size_t threads = 1) {
  detail::check_input(input, weights.hidden_dim(), "ff_forward");
  Matrix<T> out(input.rows(), weights.hidden_dim());
  parallel_for(input.rows(), threads, [&](std::size_t b0, std::size_t b1) {
    switch (level) {
      case KernelLevel::naive: detail::ff_naive(input, weights, out, b0, b1); break;
      case KernelLevel::dot: detail::ff_dot(input, weights, out, b0, b1); break;
      case KernelLevel::batched: detail::ff_batched(input, weights, out, b0, b1); break;
    }
  });
  return out;
}

}  // namespace fff
