#pragma once

// Layer configurations and weight containers for fast feedforward (tree)
// layers and their dense feedforward counterparts.
//
// Nodes of one tree are stored breadth-first: the root is node 0 and the
// children of node i are 2i+1 (left) and 2i+2 (right). Every weight matrix is
// node-major, one contiguous row of H scalars per neuron, so selecting a node
// is a row offset.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fff/errors.hpp"
#include "fff/tensor.hpp"

namespace fff {

// Largest supported path length; keeps node indices within 32 bits.
inline constexpr std::size_t kMaxPathLength = 31;

struct FFFConfig {
  std::size_t hidden_dim = 0;
  std::size_t num_trees = 1;
  // Edges on a root-to-leaf path; a single-node tree has depth 0.
  std::size_t depth = 0;
  bool has_input_bias = true;

  // Neurons engaged per token per tree: one per level.
  std::size_t path_len() const noexcept { return depth + 1; }
  std::size_t nodes_per_tree() const noexcept { return (std::size_t{1} << path_len()) - 1; }
  std::size_t total_neurons() const noexcept { return num_trees * nodes_per_tree(); }
  std::size_t engaged_neurons() const noexcept { return num_trees * path_len(); }

  void validate() const {
    if (hidden_dim == 0) throw DimensionError("FFF config: hidden_dim must be at least 1");
    if (num_trees == 0) throw DimensionError("FFF config: num_trees must be at least 1");
    if (path_len() > kMaxPathLength) {
      throw DimensionError("FFF config: depth " + std::to_string(depth) + " exceeds the supported maximum of " +
                           std::to_string(kMaxPathLength - 1));
    }
  }

  // "KxD" naming, e.g. "1x11" for one tree of depth 11.
  std::string name() const { return std::to_string(num_trees) + "x" + std::to_string(depth); }

  friend bool operator==(const FFFConfig&, const FFFConfig&) = default;
};

template <typename T>
struct TreeWeights {
  Matrix<T> w_in;       // nodes x H
  std::vector<T> b_in;  // nodes, or empty when the layer has no input bias
  Matrix<T> w_out;      // nodes x H
};

template <typename T>
class FFFLayerWeights {
 public:
  using value_type = T;

  FFFLayerWeights(FFFConfig config, std::vector<TreeWeights<T>> trees)
      : config_(config), trees_(std::move(trees)) {
    config_.validate();
    if (trees_.size() != config_.num_trees) {
      throw DimensionError("FFF weights: expected " + std::to_string(config_.num_trees) + " trees, got " +
                           std::to_string(trees_.size()));
    }
    const std::size_t nodes = config_.nodes_per_tree();
    const std::size_t h = config_.hidden_dim;
    for (std::size_t k = 0; k < trees_.size(); ++k) {
      const auto& t = trees_[k];
      const std::string where = "FFF weights, tree " + std::to_string(k) + ": ";
      if (t.w_in.rows() != nodes || t.w_in.cols() != h)
        throw DimensionError(where + "w_in is " + t.w_in.shape() + ", expected " + shape_string(nodes, h));
      if (t.w_out.rows() != nodes || t.w_out.cols() != h)
        throw DimensionError(where + "w_out is " + t.w_out.shape() + ", expected " + shape_string(nodes, h));
      const std::size_t want_bias = config_.has_input_bias ? nodes : 0;
      if (t.b_in.size() != want_bias) {
        throw DimensionError(where + "b_in has " + std::to_string(t.b_in.size()) + " entries, expected " +
                             std::to_string(want_bias));
      }
    }
  }

  const FFFConfig& config() const noexcept { return config_; }
  std::span<const TreeWeights<T>> trees() const noexcept { return trees_; }
  const TreeWeights<T>& tree(std::size_t k) const {
    if (k >= trees_.size()) {
      throw BoundsError("tree index " + std::to_string(k) + " out of range for " + std::to_string(trees_.size()) +
                        " trees");
    }
    return trees_[k];
  }

  template <typename U>
  FFFLayerWeights<U> cast() const {
    std::vector<TreeWeights<U>> out;
    out.reserve(trees_.size());
    for (const auto& t : trees_) {
      out.push_back({t.w_in.template cast<U>(), std::vector<U>(t.b_in.begin(), t.b_in.end()),
                     t.w_out.template cast<U>()});
    }
    return FFFLayerWeights<U>(config_, std::move(out));
  }

 private:
  FFFConfig config_;
  std::vector<TreeWeights<T>> trees_;
};

// Weights of a conventional two-projection feedforward layer with n neurons.
template <typename T>
class DenseLayerWeights {
 public:
  using value_type = T;

  DenseLayerWeights(Matrix<T> w_in, std::vector<T> b_in, Matrix<T> w_out)
      : w_in_(std::move(w_in)), b_in_(std::move(b_in)), w_out_(std::move(w_out)) {
    if (w_in_.rows() == 0 || w_in_.cols() == 0) throw DimensionError("dense weights: empty w_in " + w_in_.shape());
    if (w_out_.rows() != w_in_.rows() || w_out_.cols() != w_in_.cols()) {
      throw DimensionError("dense weights: w_in is " + w_in_.shape() + " but w_out is " + w_out_.shape());
    }
    if (!b_in_.empty() && b_in_.size() != w_in_.rows()) {
      throw DimensionError("dense weights: b_in has " + std::to_string(b_in_.size()) + " entries for " +
                           std::to_string(w_in_.rows()) + " neurons");
    }
  }

  std::size_t neurons() const noexcept { return w_in_.rows(); }
  std::size_t hidden_dim() const noexcept { return w_in_.cols(); }
  bool has_input_bias() const noexcept { return !b_in_.empty(); }
  const Matrix<T>& w_in() const noexcept { return w_in_; }
  std::span<const T> b_in() const noexcept { return b_in_; }
  const Matrix<T>& w_out() const noexcept { return w_out_; }

 private:
  Matrix<T> w_in_;
  std::vector<T> b_in_;
  Matrix<T> w_out_;
};

namespace detail {

// Values are drawn in single precision so a seed names the same weights at
// every compute precision.
inline std::vector<float> normal_values(std::mt19937_64& rng, std::size_t count, float scale) {
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> out(count);
  for (auto& v : out) v = dist(rng) * scale;
  return out;
}

template <typename T>
Matrix<T> normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, float scale) {
  auto vals = normal_values(rng, rows * cols, scale);
  return Matrix<float>(rows, cols, std::move(vals)).template cast<T>();
}

template <typename T>
std::vector<T> normal_vector(std::mt19937_64& rng, std::size_t n, float scale) {
  auto vals = normal_values(rng, n, scale);
  return std::vector<T>(vals.begin(), vals.end());
}

inline float init_scale(std::size_t hidden_dim) { return 1.0f / std::sqrt(static_cast<float>(hidden_dim)); }

}  // namespace detail

// Standard normal entries scaled by 1/sqrt(H), drawn tree by tree in the order
// w_in, b_in, w_out.
template <typename T>
FFFLayerWeights<T> random_fff_weights(const FFFConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const float scale = detail::init_scale(config.hidden_dim);
  const std::size_t nodes = config.nodes_per_tree();
  std::vector<TreeWeights<T>> trees;
  trees.reserve(config.num_trees);
  for (std::size_t k = 0; k < config.num_trees; ++k) {
    TreeWeights<T> t;
    t.w_in = detail::normal_matrix<T>(rng, nodes, config.hidden_dim, scale);
    if (config.has_input_bias) t.b_in = detail::normal_vector<T>(rng, nodes, scale);
    t.w_out = detail::normal_matrix<T>(rng, nodes, config.hidden_dim, scale);
    trees.push_back(std::move(t));
  }
  return FFFLayerWeights<T>(config, std::move(trees));
}

template <typename T>
FFFLayerWeights<T> zero_fff_weights(const FFFConfig& config) {
  config.validate();
  const std::size_t nodes = config.nodes_per_tree();
  std::vector<TreeWeights<T>> trees;
  for (std::size_t k = 0; k < config.num_trees; ++k) {
    trees.push_back({Matrix<T>(nodes, config.hidden_dim),
                     std::vector<T>(config.has_input_bias ? nodes : 0, T{}), Matrix<T>(nodes, config.hidden_dim)});
  }
  return FFFLayerWeights<T>(config, std::move(trees));
}

template <typename T>
DenseLayerWeights<T> random_dense_weights(std::size_t neurons, std::size_t hidden_dim, bool has_input_bias,
                                          std::uint64_t seed) {
  if (neurons == 0 || hidden_dim == 0) throw DimensionError("dense weights: neurons and hidden_dim must be >= 1");
  std::mt19937_64 rng(seed);
  const float scale = detail::init_scale(hidden_dim);
  auto w_in = detail::normal_matrix<T>(rng, neurons, hidden_dim, scale);
  std::vector<T> b_in;
  if (has_input_bias) b_in = detail::normal_vector<T>(rng, neurons, scale);
  auto w_out = detail::normal_matrix<T>(rng, neurons, hidden_dim, scale);
  return DenseLayerWeights<T>(std::move(w_in), std::move(b_in), std::move(w_out));
}

// A depth-0 FFF layer with K trees is a dense layer with K neurons; the
// neuron order is the tree order.
template <typename T>
DenseLayerWeights<T> flatten_single_node_trees(const FFFLayerWeights<T>& w) {
  const auto& cfg = w.config();
  if (cfg.path_len() != 1) throw DimensionError("flatten_single_node_trees: layer depth must be 0");
  Matrix<T> w_in(cfg.num_trees, cfg.hidden_dim);
  Matrix<T> w_out(cfg.num_trees, cfg.hidden_dim);
  std::vector<T> b_in;
  for (std::size_t k = 0; k < cfg.num_trees; ++k) {
    const auto& t = w.tree(k);
    std::copy(t.w_in.row(0).begin(), t.w_in.row(0).end(), w_in.row(k).begin());
    std::copy(t.w_out.row(0).begin(), t.w_out.row(0).end(), w_out.row(k).begin());
    if (cfg.has_input_bias) b_in.push_back(t.b_in[0]);
  }
  return DenseLayerWeights<T>(std::move(w_in), std::move(b_in), std::move(w_out));
}

}  // namespace fff
