#pragma once

// Self-contained correctness suites shared by the CLI `check` subcommand and
// the test binaries.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fff/accounting.hpp"
#include "fff/bench.hpp"
#include "fff/engine.hpp"
#include "fff/oracle.hpp"
#include "fff/weights.hpp"

namespace fff {

inline constexpr double kOracleToleranceF32 = 1e-6;
inline constexpr double kOracleToleranceF64 = 1e-12;

struct CheckResult {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  double max_deviation = 0.0;
  std::vector<std::string> failures;

  void fail(std::string what) {
    passed = false;
    if (failures.size() < 20) failures.push_back(std::move(what));
  }
};

namespace detail {

inline std::string describe(const FFFConfig& c, std::size_t batch) {
  std::ostringstream os;
  os << "H=" << c.hidden_dim << " K=" << c.num_trees << " P=" << c.path_len() << " B=" << batch
     << " bias=" << (c.has_input_bias ? "on" : "off");
  return os.str();
}

struct SweepCase {
  FFFConfig config;
  std::size_t batch;
  std::uint64_t seed;
};

// Seeded configs with H in [1,16], P in [1,5], K in [1,4], B in [1,8] and the
// input bias on or off.
inline std::vector<SweepCase> oracle_sweep_cases(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> hid(1, 16), path(1, 5), trees(1, 4), batch(1, 8), coin(0, 1);
  std::vector<SweepCase> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SweepCase c;
    c.config.hidden_dim = hid(rng);
    c.config.depth = path(rng) - 1;
    c.config.num_trees = trees(rng);
    c.config.has_input_bias = coin(rng) == 1;
    c.batch = batch(rng);
    c.seed = rng();
    out.push_back(c);
  }
  return out;
}

template <typename T>
void oracle_case(const SweepCase& c, double tolerance, CheckResult& result) {
  const auto weights = random_fff_weights<T>(c.config, c.seed);
  const auto input = random_input<T>(c.batch, c.config.hidden_dim, c.seed + 1);
  const auto reference = masked_dense_oracle_with_scale(input, weights);
  for (const auto level : kAllLevels) {
    const double dev = scaled_deviation(fff_forward(input, weights, level), reference);
    result.max_deviation = std::max(result.max_deviation, dev);
    ++result.cases;
    if (!(dev <= tolerance)) {
      result.fail(describe(c.config, c.batch) + " level=" + to_string(level) + " precision=" +
                  (sizeof(T) == 4 ? "f32" : "f64") + " deviation=" + std::to_string(dev));
    }
  }
}

}  // namespace detail

// fff_forward at every level against the masked-dense oracle.
inline CheckResult check_oracle(std::size_t configs = 1000, std::uint64_t seed = 20231121) {
  CheckResult r{"oracle"};
  for (const auto& c : detail::oracle_sweep_cases(configs, seed)) {
    detail::oracle_case<float>(c, kOracleToleranceF32, r);
    detail::oracle_case<double>(c, kOracleToleranceF64, r);
  }
  return r;
}

// Exactly-P engagement and tree coverage properties.
inline CheckResult check_usage(std::uint64_t seed = 7) {
  CheckResult r{"usage"};
  auto expect = [&](bool ok, const std::string& what) {
    ++r.cases;
    if (!ok) r.fail(what);
  };

  // One tree of depth 11 over a hidden size of 768: 12 of 4095 neurons.
  {
    const FFFConfig cfg{768, 1, 11, true};
    const auto weights = random_fff_weights<float>(cfg, seed);
    const auto input = random_input<float>(256, cfg.hidden_dim, seed + 1);
    const auto trace = cmm_descend(input, weights, 0, KernelLevel::dot);
    for (std::size_t b = 0; b < input.rows(); ++b) {
      std::set<NodeIndex> distinct(trace.nodes.row(b).begin(), trace.nodes.row(b).end());
      ++r.cases;
      if (distinct.size() != 12) {
        r.fail("1x11: token " + std::to_string(b) + " engaged " + std::to_string(distinct.size()) + " neurons");
      }
    }
    expect(check_path_trace(trace).empty(), "1x11: invalid path trace: " + check_path_trace(trace));
    const auto usage = neuron_usage(cfg);
    expect(usage.total == 4095 && usage.engaged == 12, "1x11: neuron accounting is not 12 of 4095");
  }

  // Zero weights always route left.
  {
    const FFFConfig cfg{5, 2, 2, true};
    const auto weights = zero_fff_weights<float>(cfg);
    const auto input = random_input<float>(16, cfg.hidden_dim, seed + 2);
    for (std::size_t k = 0; k < cfg.num_trees; ++k) {
      const auto trace = cmm_descend(input, weights, k, KernelLevel::naive);
      bool left = true;
      for (std::size_t b = 0; b < input.rows(); ++b)
        for (std::size_t d = 0; d < cfg.path_len(); ++d) left = left && trace.nodes(b, d) == (1u << d) - 1;
      expect(left, "zero weights: descent left the leftmost chain");
    }
  }

  // Positive input scaling does not change routing without biases.
  {
    const FFFConfig cfg{12, 3, 4, false};
    const auto weights = random_fff_weights<double>(cfg, seed + 3);
    auto input = random_input<double>(32, cfg.hidden_dim, seed + 4);
    auto scaled = input;
    for (auto& v : scaled.data()) v *= 3.75;
    for (std::size_t k = 0; k < cfg.num_trees; ++k) {
      expect(cmm_descend(input, weights, k, KernelLevel::dot).nodes ==
                 cmm_descend(scaled, weights, k, KernelLevel::dot).nodes,
             "positive scaling changed the node path of tree " + std::to_string(k));
    }
  }

  // 4096 random tokens reach every node of a 15-node tree.
  {
    const FFFConfig cfg{16, 1, 3, true};
    const auto weights = random_fff_weights<float>(cfg, seed + 5);
    const auto input = random_input<float>(4096, cfg.hidden_dim, seed + 6);
    const auto trace = cmm_descend(input, weights, 0, KernelLevel::batched);
    const auto visits = node_coverage(trace, cfg);
    std::uint64_t total = 0;
    for (std::size_t n = 0; n < visits.size(); ++n) {
      total += visits[n];
      expect(visits[n] > 0, "coverage: node " + std::to_string(n) + " never visited");
    }
    expect(total == 4096 * cfg.path_len(), "coverage: total visits differ from B*P");
  }
  return r;
}

// Repeated seeded runs give bitwise-identical outputs, for any thread count.
inline CheckResult check_determinism(std::size_t repeats = 5, std::uint64_t seed = 11) {
  CheckResult r{"determinism"};
  const FFFConfig cfg{24, 3, 5, true};
  const auto first_weights = random_fff_weights<float>(cfg, seed);
  const auto input = random_input<float>(37, cfg.hidden_dim, seed + 1);
  for (const auto level : kAllLevels) {
    const auto base = fff_forward(input, first_weights, level);
    for (std::size_t i = 0; i < repeats; ++i) {
      ++r.cases;
      const auto weights = random_fff_weights<float>(cfg, seed);
      if (!bitwise_equal(fff_forward(input, weights, level, 1 + i % 3), base)) {
        r.fail("fff level=" + to_string(level) + " repeat " + std::to_string(i) + " differs");
      }
    }
    const auto dense = random_dense_weights<float>(19, cfg.hidden_dim, true, seed + 2);
    const auto dense_base = ff_forward(input, dense, level);
    for (std::size_t i = 0; i < repeats; ++i) {
      ++r.cases;
      if (!bitwise_equal(ff_forward(input, dense, level, 1 + i % 3), dense_base)) {
        r.fail("dense level=" + to_string(level) + " repeat " + std::to_string(i) + " differs");
      }
    }
  }
  return r;
}

namespace detail {

template <typename T>
void level_case(const FFFConfig& cfg, std::size_t batch, std::uint64_t seed, CheckResult& r) {
  const auto weights = random_fff_weights<T>(cfg, seed);
  const auto input = random_input<T>(batch, cfg.hidden_dim, seed + 1);
  const auto ref = fff_forward(input, weights, KernelLevel::naive);
  for (const auto level : {KernelLevel::dot, KernelLevel::batched}) {
    ++r.cases;
    if (!bitwise_equal(fff_forward(input, weights, level), ref))
      r.fail("fff " + describe(cfg, batch) + " level " + to_string(level) + " differs from naive");
  }
  const auto dense = random_dense_weights<T>(cfg.total_neurons(), cfg.hidden_dim, cfg.has_input_bias, seed + 2);
  const auto dref = ff_forward(input, dense, KernelLevel::naive);
  for (const auto level : {KernelLevel::dot, KernelLevel::batched}) {
    ++r.cases;
    if (!bitwise_equal(ff_forward(input, dense, level), dref))
      r.fail("dense n=" + std::to_string(cfg.total_neurons()) + " level " + to_string(level) + " differs from naive");
  }
}

}  // namespace detail

// naive, dot and batched levels agree bitwise in each precision.
inline CheckResult check_levels(std::uint64_t seed = 13) {
  CheckResult r{"levels"};
  const std::vector<std::pair<FFFConfig, std::size_t>> cases{
      {{1, 1, 0, true}, 1},     {{7, 2, 2, false}, 9},   {{16, 4, 4, true}, 71},
      {{33, 3, 5, true}, 130},  {{64, 1, 7, false}, 65}, {{128, 2, 3, true}, 200},
  };
  std::uint64_t s = seed;
  for (const auto& [cfg, batch] : cases) {
    detail::level_case<float>(cfg, batch, s++, r);
    detail::level_case<double>(cfg, batch, s++, r);
  }
  return r;
}

inline const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names{"oracle", "usage", "determinism", "levels"};
  return names;
}

inline CheckResult run_check(const std::string& name) {
  if (name == "oracle") return check_oracle();
  if (name == "usage") return check_usage();
  if (name == "determinism") return check_determinism();
  if (name == "levels") return check_levels();
  throw UsageError("unknown check suite '" + name + "' (expected oracle, usage, determinism, levels or all)");
}

}  // namespace fff
