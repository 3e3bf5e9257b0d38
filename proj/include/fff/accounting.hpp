#pragma once

// Closed-form neuron and multiply-accumulate accounting. Nothing here is
// measured: every count is a function of the layer dimensions.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fff/engine.hpp"
#include "fff/errors.hpp"
#include "fff/weights.hpp"

namespace fff {

struct NeuronUsage {
  std::uint64_t total = 0;    // neurons available for training
  std::uint64_t engaged = 0;  // neurons used by one inference
  double fraction() const noexcept { return static_cast<double>(engaged) / static_cast<double>(total); }
};

inline NeuronUsage neuron_usage(const FFFConfig& config) {
  config.validate();
  return {config.total_neurons(), config.engaged_neurons()};
}

struct MacCount {
  std::uint64_t multiply_accumulate_ops = 0;
  std::uint64_t weight_rows_loaded = 0;
};

namespace detail {

inline std::uint64_t checked_product(std::initializer_list<std::uint64_t> factors) {
  std::uint64_t r = 1;
  for (auto f : factors) {
    if (f != 0 && r > std::numeric_limits<std::uint64_t>::max() / f) throw DimensionError("MAC count overflows 64 bits");
    r *= f;
  }
  return r;
}

}  // namespace detail

// Input and output projections of a dense layer with n neurons over B tokens.
inline MacCount mac_count_dense(std::uint64_t batch, std::uint64_t hidden, std::uint64_t neurons) {
  return {detail::checked_product({2, batch, neurons, hidden}), detail::checked_product({2, batch, neurons})};
}

// K trees with path length P engage K*P neurons per token.
inline MacCount mac_count_fff(std::uint64_t batch, std::uint64_t hidden, std::uint64_t trees,
                              std::uint64_t path_len) {
  return {detail::checked_product({2, batch, trees, path_len, hidden}),
          detail::checked_product({2, batch, trees, path_len})};
}

inline double mac_ratio(const MacCount& numerator, const MacCount& denominator) {
  return static_cast<double>(numerator.multiply_accumulate_ops) /
         static_cast<double>(denominator.multiply_accumulate_ops);
}

// Per-node visit counts for one tree, summed over every token of every trace.
template <typename T>
std::vector<std::uint64_t> node_coverage(std::span<const PathTrace<T>> traces, const FFFConfig& config) {
  std::vector<std::uint64_t> visits(config.nodes_per_tree(), 0);
  for (const auto& trace : traces) {
    if (trace.nodes.cols() != config.path_len()) {
      throw DimensionError("node_coverage: trace has " + std::to_string(trace.nodes.cols()) +
                           " levels, config expects " + std::to_string(config.path_len()));
    }
    for (const auto node : trace.nodes.data()) {
      if (node >= visits.size()) throw BoundsError("node_coverage: node index " + std::to_string(node) + " out of range");
      ++visits[node];
    }
  }
  return visits;
}

template <typename T>
std::vector<std::uint64_t> node_coverage(const PathTrace<T>& trace, const FFFConfig& config) {
  return node_coverage(std::span<const PathTrace<T>>(&trace, 1), config);
}

// First violated path invariant, or an empty string when the trace is a
// valid descent: root start, child recurrence, and depth-range containment.
template <typename T>
std::string check_path_trace(const PathTrace<T>& trace, bool check_recurrence = true) {
  const std::size_t depth = trace.nodes.cols();
  for (std::size_t b = 0; b < trace.nodes.rows(); ++b) {
    if (trace.nodes(b, 0) != 0) return "token " + std::to_string(b) + " does not start at the root";
    for (std::size_t d = 0; d < depth; ++d) {
      const std::uint64_t lo = (std::uint64_t{1} << d) - 1;
      const std::uint64_t hi = (std::uint64_t{1} << (d + 1)) - 2;
      const std::uint64_t n = trace.nodes(b, d);
      if (n < lo || n > hi) {
        return "token " + std::to_string(b) + " level " + std::to_string(d) + " node " + std::to_string(n) +
               " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
      }
      if (check_recurrence && d + 1 < depth) {
        const std::uint64_t expect = 2 * n + 1 + (trace.logits(b, d) > T{0} ? 1 : 0);
        if (trace.nodes(b, d + 1) != expect) {
          return "token " + std::to_string(b) + " level " + std::to_string(d + 1) + " breaks the child recurrence";
        }
      }
    }
  }
  return {};
}

}  // namespace fff
