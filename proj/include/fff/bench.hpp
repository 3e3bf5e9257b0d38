#pragma once

// Timed FF / FFF forwards. Weights and inputs are generated from the seed
// outside the timed region; each timed sample covers exactly one forward call
// on a monotonic clock, after untimed warmup passes.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fff/accounting.hpp"
#include "fff/engine.hpp"
#include "fff/errors.hpp"
#include "fff/tensor.hpp"
#include "fff/weights.hpp"

namespace fff {

enum class Implementation { dense, fff };

inline std::string to_string(Implementation impl) { return impl == Implementation::dense ? "dense" : "fff"; }

inline Implementation parse_implementation(const std::string& s) {
  if (s == "dense") return Implementation::dense;
  if (s == "fff") return Implementation::fff;
  throw UsageError("unknown implementation '" + s + "' (expected dense or fff)");
}

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw UsageError("unknown precision '" + s + "' (expected f32 or f64)");
}

// Standard deviation at or above this fraction of the mean marks a run noisy.
inline constexpr double kNoiseThreshold = 0.02;

struct BenchConfig {
  Implementation impl = Implementation::fff;
  KernelLevel level = KernelLevel::dot;
  std::size_t batch = 128 * 128;
  std::size_t hidden = 768;
  std::size_t trees = 1;
  std::size_t depth = 11;
  std::size_t neurons = 4095;  // dense only
  std::size_t passes = 250;
  std::size_t warmup = 10;
  std::uint64_t seed = 42;
  Precision precision = Precision::f32;
  std::size_t threads = 1;
  bool input_bias = true;

  FFFConfig fff_config() const { return {hidden, trees, depth, input_bias}; }

  // "dense-4095" or "fff-1x11".
  std::string model_name() const {
    return impl == Implementation::dense ? "dense-" + std::to_string(neurons) : "fff-" + fff_config().name();
  }

  MacCount macs() const {
    return impl == Implementation::dense ? mac_count_dense(batch, hidden, neurons)
                                         : mac_count_fff(batch, hidden, trees, depth + 1);
  }

  void validate() const {
    if (passes < 2) throw UsageError("passes must be at least 2, got " + std::to_string(passes));
    if (batch == 0) throw UsageError("batch must be at least 1");
    if (hidden == 0) throw UsageError("hidden must be at least 1");
    if (threads == 0) throw UsageError("threads must be at least 1");
    if (impl == Implementation::dense) {
      if (neurons == 0) throw UsageError("neurons must be at least 1");
    } else {
      if (trees == 0) throw UsageError("trees must be at least 1");
      if (depth + 1 > kMaxPathLength) throw UsageError("depth must be at most " + std::to_string(kMaxPathLength - 1));
    }
  }
};

struct BenchReport {
  BenchConfig config;
  double mean_ns = 0.0;  // one whole-batch forward
  double std_ns = 0.0;   // sample standard deviation over the timed passes
  double std_over_mean = 0.0;
  MacCount macs;
  std::optional<double> speedup_vs_reference;
  double checksum = 0.0;  // sum of the last output, keeps the forward observable

  bool noisy() const noexcept { return std_over_mean >= kNoiseThreshold; }
  double per_token_ns() const noexcept { return mean_ns / static_cast<double>(config.batch); }
};

struct SampleStats {
  double mean = 0.0;
  double stddev = 0.0;
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (const double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

// Seeded N(0, 1) hidden states.
template <typename T>
Matrix<T> random_input(std::size_t batch, std::size_t hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Matrix<float> m(batch, hidden);
  for (auto& v : m.data()) v = dist(rng);
  return m.template cast<T>();
}

namespace detail {

// Distinct streams for weights and inputs derived from one user seed.
inline std::uint64_t weight_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 1; }
inline std::uint64_t input_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 2; }

template <typename T>
BenchReport run_bench_typed(const BenchConfig& cfg) {
  const Matrix<T> input = random_input<T>(cfg.batch, cfg.hidden, input_seed(cfg.seed));
  std::function<Matrix<T>()> forward;
  std::optional<FFFLayerWeights<T>> fff_weights;
  std::optional<DenseLayerWeights<T>> dense_weights;
  if (cfg.impl == Implementation::fff) {
    fff_weights.emplace(random_fff_weights<T>(cfg.fff_config(), weight_seed(cfg.seed)));
    forward = [&] { return fff_forward(input, *fff_weights, cfg.level, cfg.threads); };
  } else {
    dense_weights.emplace(random_dense_weights<T>(cfg.neurons, cfg.hidden, cfg.input_bias, weight_seed(cfg.seed)));
    forward = [&] { return ff_forward(input, *dense_weights, cfg.level, cfg.threads); };
  }

  Matrix<T> out;
  for (std::size_t i = 0; i < cfg.warmup; ++i) out = forward();
  std::vector<double> samples;
  samples.reserve(cfg.passes);
  for (std::size_t i = 0; i < cfg.passes; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    out = forward();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }

  BenchReport r;
  r.config = cfg;
  const auto stats = sample_stats(samples);
  r.mean_ns = stats.mean;
  r.std_ns = stats.stddev;
  r.std_over_mean = stats.mean > 0.0 ? stats.stddev / stats.mean : 0.0;
  r.macs = cfg.macs();
  for (const T v : out.data()) r.checksum += static_cast<double>(v);
  return r;
}

}  // namespace detail

inline BenchReport run_bench(const BenchConfig& cfg) {
  cfg.validate();
  try {
    return cfg.precision == Precision::f32 ? detail::run_bench_typed<float>(cfg)
                                           : detail::run_bench_typed<double>(cfg);
  } catch (const std::bad_alloc&) {
    throw ResourceError("out of memory benchmarking " + cfg.model_name() + " at batch " + std::to_string(cfg.batch) +
                        " x hidden " + std::to_string(cfg.hidden) + "; try a smaller --batch");
  } catch (const std::length_error&) {
    throw ResourceError("requested sizes for " + cfg.model_name() + " exceed addressable memory; try a smaller --batch");
  }
}

struct Comparison {
  BenchReport reference;  // numerator, usually the dense layer
  BenchReport candidate;  // denominator, usually the FFF layer
  double speedup = 0.0;   // reference mean / candidate mean
  double mac_ratio = 0.0;  // reference MACs / candidate MACs
  bool cross_level = false;
};

// Refuses pairs that differ in batch, hidden size, precision or threads, and
// pairs at different kernel levels unless `allow_unfair` is set.
inline void check_comparable(const BenchConfig& reference, const BenchConfig& candidate, bool allow_unfair) {
  if (reference.batch != candidate.batch || reference.hidden != candidate.hidden)
    throw UsageError("compared runs must share batch and hidden size");
  if (reference.precision != candidate.precision) throw UsageError("compared runs must share precision");
  if (reference.threads != candidate.threads) throw UsageError("compared runs must share the thread count");
  if (reference.level != candidate.level && !allow_unfair) {
    throw UsageError("kernel levels differ (" + to_string(reference.level) + " vs " + to_string(candidate.level) +
                     "); pass --allow-unfair for a cross-level comparison");
  }
}

inline Comparison make_comparison(BenchReport reference, BenchReport candidate) {
  Comparison c;
  c.cross_level = reference.config.level != candidate.config.level;
  c.speedup = reference.mean_ns / candidate.mean_ns;
  c.mac_ratio = mac_ratio(reference.macs, candidate.macs);
  candidate.speedup_vs_reference = c.speedup;
  reference.speedup_vs_reference = 1.0;
  c.reference = std::move(reference);
  c.candidate = std::move(candidate);
  return c;
}

inline Comparison compare(const BenchConfig& reference, const BenchConfig& candidate, bool allow_unfair = false) {
  check_comparable(reference, candidate, allow_unfair);
  auto ref = run_bench(reference);
  auto cand = run_bench(candidate);
  return make_comparison(std::move(ref), std::move(cand));
}

}  // namespace fff
