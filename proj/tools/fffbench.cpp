// fffbench: benchmark, verify and exercise FF / FFF inference from the command line.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fff/fff.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

constexpr int kExitCheckFailed = 1;
constexpr int kExitError = 3;

struct RunOptions {
  std::string impl = "fff";
  std::vector<std::string> levels{"dot"};
  std::size_t batch = 128 * 128;
  std::size_t hidden = 768;
  std::size_t trees = 1;
  std::size_t depth = 11;
  std::size_t neurons = 4095;
  std::size_t passes = 250;
  std::size_t warmup = 10;
  std::uint64_t seed = 42;
  std::string precision = "f32";
  std::size_t threads = 1;
  bool no_bias = false;
  std::string format = "table";
  std::string json_out;
};

void add_run_options(CLI::App& cmd, RunOptions& o, bool multi_level) {
  cmd.add_option("--impl", o.impl, "Implementation")->check(CLI::IsMember({"dense", "fff"}))->capture_default_str();
  auto* level = cmd.add_option("--level", o.levels, "Kernel level")
                    ->check(CLI::IsMember({"naive", "dot", "batched"}))
                    ->capture_default_str();
  if (!multi_level) level->expected(1);
  cmd.add_option("--batch", o.batch, "Tokens per forward")->capture_default_str();
  cmd.add_option("--hidden", o.hidden, "Hidden dimension H")->capture_default_str();
  cmd.add_option("--trees", o.trees, "FFF trees K")->capture_default_str();
  cmd.add_option("--depth", o.depth, "FFF tree depth (a single node has depth 0)")->capture_default_str();
  cmd.add_option("--neurons", o.neurons, "Dense layer width")->capture_default_str();
  cmd.add_option("--passes", o.passes, "Timed forward passes")->capture_default_str();
  cmd.add_option("--warmup", o.warmup, "Untimed warmup passes")->capture_default_str();
  cmd.add_option("--seed", o.seed, "Seed for weights and inputs")->capture_default_str();
  cmd.add_option("--precision", o.precision, "Compute precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  cmd.add_option("--threads", o.threads, "Worker threads per forward")->capture_default_str();
  cmd.add_flag("--no-bias", o.no_bias, "Generate layers without input biases");
  cmd.add_option("--format", o.format, "Output format")
      ->check(CLI::IsMember({"table", "csv", "json"}))
      ->capture_default_str();
  cmd.add_option("--json-out", o.json_out, "Also write the JSON report to this file");
}

fff::BenchConfig to_config(const RunOptions& o, const std::string& level) {
  fff::BenchConfig c;
  c.impl = fff::parse_implementation(o.impl);
  c.level = fff::parse_kernel_level(level);
  c.batch = o.batch;
  c.hidden = o.hidden;
  c.trees = o.trees;
  c.depth = o.depth;
  c.neurons = o.neurons;
  c.passes = o.passes;
  c.warmup = o.warmup;
  c.seed = o.seed;
  c.precision = fff::parse_precision(o.precision);
  c.threads = o.threads;
  c.input_bias = !o.no_bias;
  return c;
}

json report_json(const fff::BenchReport& r) {
  const auto& c = r.config;
  json j{{"model", c.model_name()},
         {"impl", fff::to_string(c.impl)},
         {"level", fff::to_string(c.level)},
         {"batch", c.batch},
         {"hidden", c.hidden},
         {"passes", c.passes},
         {"warmup", c.warmup},
         {"seed", c.seed},
         {"precision", fff::to_string(c.precision)},
         {"threads", c.threads},
         {"input_bias", c.input_bias},
         {"mean_ns", r.mean_ns},
         {"std_ns", r.std_ns},
         {"std_over_mean", r.std_over_mean},
         {"per_token_ns", r.per_token_ns()},
         {"noisy", r.noisy()},
         {"macs", r.macs.multiply_accumulate_ops},
         {"weight_rows_loaded", r.macs.weight_rows_loaded},
         {"checksum", r.checksum}};
  if (c.impl == fff::Implementation::dense) {
    j["neurons"] = c.neurons;
  } else {
    j["trees"] = c.trees;
    j["depth"] = c.depth;
  }
  j["speedup_vs_reference"] = r.speedup_vs_reference ? json(*r.speedup_vs_reference) : json(nullptr);
  return j;
}

std::string fmt(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void emit_json(const json& doc, const RunOptions& o, bool after_table) {
  if (!o.json_out.empty()) {
    std::ofstream out(o.json_out);
    if (!out) throw fff::IoError("cannot open '" + o.json_out + "' for writing");
    out << doc.dump(2) << "\n";
  }
  if (o.format == "json") {
    std::cout << doc.dump(2) << "\n";
  } else if (after_table && o.json_out.empty()) {
    std::cout << "\n# json\n" << doc.dump() << "\n";
  }
}

void print_runs_csv(const std::vector<fff::BenchReport>& runs) {
  std::cout << "model,impl,level,batch,hidden,precision,threads,passes,mean_ns,std_ns,std_over_mean,per_token_ns,"
               "macs,noisy,speedup\n";
  for (const auto& r : runs) {
    const auto& c = r.config;
    std::cout << c.model_name() << ',' << fff::to_string(c.impl) << ',' << fff::to_string(c.level) << ',' << c.batch
              << ',' << c.hidden << ',' << fff::to_string(c.precision) << ',' << c.threads << ',' << c.passes << ','
              << fmt(r.mean_ns, 1) << ',' << fmt(r.std_ns, 1) << ',' << fmt(r.std_over_mean, 5) << ','
              << fmt(r.per_token_ns(), 3) << ',' << r.macs.multiply_accumulate_ops << ',' << (r.noisy() ? 1 : 0)
              << ',' << (r.speedup_vs_reference ? fmt(*r.speedup_vs_reference, 3) : "") << '\n';
  }
}

void print_runs_table(const std::vector<fff::BenchReport>& runs) {
  std::cout << std::left << std::setw(14) << "model" << std::setw(9) << "level" << std::right << std::setw(14)
            << "mean ms" << std::setw(12) << "std ms" << std::setw(10) << "std/mean" << std::setw(14)
            << "ns/token" << std::setw(18) << "MACs" << "  flag\n";
  for (const auto& r : runs) {
    std::cout << std::left << std::setw(14) << r.config.model_name() << std::setw(9) << fff::to_string(r.config.level)
              << std::right << std::setw(14) << fmt(r.mean_ns / 1e6, 3) << std::setw(12) << fmt(r.std_ns / 1e6, 3)
              << std::setw(9) << fmt(100.0 * r.std_over_mean, 2) << "%" << std::setw(14)
              << fmt(r.per_token_ns(), 2) << std::setw(18) << r.macs.multiply_accumulate_ops << "  "
              << (r.noisy() ? "NOISY" : "") << "\n";
  }
}

int cmd_bench(const RunOptions& o) {
  std::vector<fff::BenchReport> runs;
  for (const auto& level : o.levels) runs.push_back(fff::run_bench(to_config(o, level)));
  json doc{{"runs", json::array()}};
  for (const auto& r : runs) doc["runs"].push_back(report_json(r));
  if (o.format == "csv") print_runs_csv(runs);
  if (o.format == "table") print_runs_table(runs);
  emit_json(doc, o, o.format == "table");
  return 0;
}

struct ReferenceOptions {
  std::string impl = "dense";
  std::string level;
  std::size_t neurons = 4095;
  std::size_t trees = 1;
  std::size_t depth = 11;
  bool allow_unfair = false;
};

// Rows are models, columns kernel levels; entries are speedups over the
// reference row at the same level, with the closed-form MAC ratio as "Limit".
void print_comparison_table(const std::vector<fff::Comparison>& cs) {
  const auto& first = cs.front();
  std::cout << std::left << std::setw(16) << "Model" << std::right << std::setw(11) << "Limit";
  for (const auto& c : cs) {
    const std::string col = c.cross_level ? fff::to_string(c.candidate.config.level) + " vs " +
                                                fff::to_string(c.reference.config.level) + " (cross-level)"
                                          : fff::to_string(c.candidate.config.level);
    std::cout << std::setw(c.cross_level ? 36 : 12) << col;
  }
  std::cout << "\n";
  auto row = [&](const std::string& name, const std::string& limit, auto value) {
    std::cout << std::left << std::setw(16) << name << std::right << std::setw(11) << limit;
    for (const auto& c : cs) std::cout << std::setw(c.cross_level ? 36 : 12) << value(c);
    std::cout << "\n";
  };
  row(first.reference.config.model_name(), "1.00x", [](const fff::Comparison&) { return std::string("1.00x"); });
  row(first.candidate.config.model_name(), fmt(first.mac_ratio, 2) + "x",
      [](const fff::Comparison& c) { return fmt(c.speedup, 2) + "x"; });
  std::cout << "\n";
  std::vector<fff::BenchReport> runs;
  for (const auto& c : cs) {
    runs.push_back(c.reference);
    runs.push_back(c.candidate);
  }
  print_runs_table(runs);
}

int cmd_compare(const RunOptions& o, const ReferenceOptions& ref) {
  std::vector<fff::Comparison> results;
  for (const auto& level : o.levels) {
    const auto cand = to_config(o, level);
    RunOptions ro = o;
    ro.impl = ref.impl;
    ro.neurons = ref.neurons;
    ro.trees = ref.trees;
    ro.depth = ref.depth;
    const auto rcfg = to_config(ro, ref.level.empty() ? level : ref.level);
    results.push_back(fff::compare(rcfg, cand, ref.allow_unfair));
  }
  json doc{{"runs", json::array()}, {"comparisons", json::array()}};
  for (const auto& c : results) {
    doc["runs"].push_back(report_json(c.reference));
    doc["runs"].push_back(report_json(c.candidate));
    doc["comparisons"].push_back({{"reference", c.reference.config.model_name()},
                                  {"candidate", c.candidate.config.model_name()},
                                  {"reference_level", fff::to_string(c.reference.config.level)},
                                  {"candidate_level", fff::to_string(c.candidate.config.level)},
                                  {"label", c.cross_level ? "cross-level" : "matched-level"},
                                  {"speedup", c.speedup},
                                  {"mac_ratio", c.mac_ratio}});
  }
  if (o.format == "csv") {
    std::vector<fff::BenchReport> runs;
    for (const auto& c : results) {
      runs.push_back(c.reference);
      runs.push_back(c.candidate);
    }
    print_runs_csv(runs);
  }
  if (o.format == "table") print_comparison_table(results);
  emit_json(doc, o, o.format == "table");
  return 0;
}

int cmd_check(const std::vector<std::string>& suites, const std::string& format) {
  std::vector<std::string> names;
  for (const auto& s : suites) {
    if (s == "all") {
      names.insert(names.end(), fff::check_names().begin(), fff::check_names().end());
    } else {
      names.push_back(s);
    }
  }
  bool ok = true;
  json doc = json::array();
  std::vector<fff::CheckResult> results;
  for (const auto& n : names) {
    results.push_back(fff::run_check(n));
    const auto& r = results.back();
    ok = ok && r.passed;
    doc.push_back({{"suite", r.name},
                   {"passed", r.passed},
                   {"cases", r.cases},
                   {"max_deviation", r.max_deviation},
                   {"failures", r.failures}});
  }
  if (format == "json") {
    std::cout << doc.dump(2) << "\n";
  } else if (format == "csv") {
    std::cout << "suite,passed,cases,max_deviation\n";
    for (const auto& r : results) std::cout << r.name << ',' << (r.passed ? 1 : 0) << ',' << r.cases << ',' << r.max_deviation << '\n';
  } else {
    for (const auto& r : results) {
      std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(12) << r.name << " cases=" << r.cases;
      if (r.name == "oracle") std::cout << " max_deviation=" << std::scientific << r.max_deviation << std::defaultfloat;
      std::cout << "\n";
      for (const auto& f : r.failures) std::cout << "    " << f << "\n";
    }
    std::cout << "\n# json\n" << doc.dump() << "\n";
  }
  return ok ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fast feedforward (FFF) inference benchmarks and checks"};
  app.require_subcommand(1);

  RunOptions bench_opts;
  auto* bench = app.add_subcommand("bench", "Time one implementation at one or more kernel levels");
  add_run_options(*bench, bench_opts, true);

  RunOptions cmp_opts;
  ReferenceOptions ref_opts;
  auto* cmp = app.add_subcommand("compare", "Speedup of a candidate over a reference (dense by default)");
  add_run_options(*cmp, cmp_opts, true);
  cmp->add_option("--ref-impl", ref_opts.impl, "Reference implementation")
      ->check(CLI::IsMember({"dense", "fff"}))
      ->capture_default_str();
  cmp->add_option("--ref-level", ref_opts.level, "Reference kernel level (defaults to --level)")
      ->check(CLI::IsMember({"naive", "dot", "batched"}));
  cmp->add_option("--ref-neurons", ref_opts.neurons, "Reference dense width")->capture_default_str();
  cmp->add_option("--ref-trees", ref_opts.trees, "Reference FFF trees")->capture_default_str();
  cmp->add_option("--ref-depth", ref_opts.depth, "Reference FFF depth")->capture_default_str();
  cmp->add_flag("--allow-unfair", ref_opts.allow_unfair, "Permit reference and candidate at different levels");

  std::vector<std::string> suites;
  std::string check_format = "table";
  auto* check = app.add_subcommand("check", "Run correctness suites");
  check->add_option("suites", suites, "oracle, usage, determinism, levels or all")
      ->required()
      ->check(CLI::IsMember({"oracle", "usage", "determinism", "levels", "all"}));
  check->add_option("--format", check_format, "Output format")
      ->check(CLI::IsMember({"table", "csv", "json"}))
      ->capture_default_str();

  fff::FFFConfig gen_cfg{768, 1, 11, true};
  std::uint64_t gen_seed = 42;
  std::string gen_out;
  bool gen_no_bias = false;
  auto* gen = app.add_subcommand("gen-weights", "Write seeded FFF layer weights (FFFW)");
  gen->add_option("--trees", gen_cfg.num_trees)->capture_default_str();
  gen->add_option("--depth", gen_cfg.depth)->capture_default_str();
  gen->add_option("--hidden", gen_cfg.hidden_dim)->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_flag("--no-bias", gen_no_bias);
  gen->add_option("--out", gen_out)->required();

  std::size_t model_layers = 2, model_heads = 2;
  fff::FFFConfig model_cfg{8, 2, 1, true};
  std::uint64_t model_seed = 42;
  std::string model_out;
  auto* gen_model = app.add_subcommand("gen-model", "Write a seeded encoder model (UFBM)");
  gen_model->add_option("--layers", model_layers)->capture_default_str();
  gen_model->add_option("--hidden", model_cfg.hidden_dim)->capture_default_str();
  gen_model->add_option("--heads", model_heads)->capture_default_str();
  gen_model->add_option("--trees", model_cfg.num_trees)->capture_default_str();
  gen_model->add_option("--depth", model_cfg.depth)->capture_default_str();
  gen_model->add_option("--seed", model_seed)->capture_default_str();
  gen_model->add_option("--out", model_out)->required();

  std::size_t acts_batch = 4, acts_hidden = 8;
  std::uint64_t acts_seed = 42;
  std::string acts_out;
  auto* gen_acts = app.add_subcommand("gen-acts", "Write seeded N(0,1) hidden states (ACTS)");
  gen_acts->add_option("--batch", acts_batch)->capture_default_str();
  gen_acts->add_option("--hidden", acts_hidden)->capture_default_str();
  gen_acts->add_option("--seed", acts_seed)->capture_default_str();
  gen_acts->add_option("--out", acts_out)->required();

  std::string fwd_model, fwd_in, fwd_out, fwd_level = "dot", fwd_precision = "f32";
  std::size_t fwd_threads = 1;
  auto* forward = app.add_subcommand("forward", "Run an encoder model (UFBM) over hidden states (ACTS)");
  forward->add_option("--model", fwd_model)->required();
  forward->add_option("--input", fwd_in)->required();
  forward->add_option("--output", fwd_out)->required();
  forward->add_option("--level", fwd_level)->check(CLI::IsMember({"naive", "dot", "batched"}))->capture_default_str();
  forward->add_option("--precision", fwd_precision)->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
  forward->add_option("--threads", fwd_threads)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bench) return cmd_bench(bench_opts);
    if (*cmp) return cmd_compare(cmp_opts, ref_opts);
    if (*check) return cmd_check(suites, check_format);
    if (*gen) {
      gen_cfg.has_input_bias = !gen_no_bias;
      const auto bytes = fff::io::save_fffw(fff::random_fff_weights<float>(gen_cfg, gen_seed), gen_out);
      std::cout << "wrote " << gen_out << " (" << bytes << " bytes, " << gen_cfg.name() << ", H=" << gen_cfg.hidden_dim
                << ")\n";
      return 0;
    }
    if (*gen_model) {
      const auto model =
          fff::random_encoder_model<float>(model_layers, model_cfg.hidden_dim, model_heads, model_cfg, model_seed);
      const auto bytes = fff::io::save_ufbm(model, model_out);
      std::cout << "wrote " << model_out << " (" << bytes << " bytes)\n";
      return 0;
    }
    if (*gen_acts) {
      const auto bytes = fff::io::save_acts(fff::random_input<float>(acts_batch, acts_hidden, acts_seed), acts_out);
      std::cout << "wrote " << acts_out << " (" << bytes << " bytes)\n";
      return 0;
    }
    if (*forward) {
      const auto model = fff::io::load_ufbm(fwd_model);
      const auto input = fff::io::load_acts(fwd_in);
      const auto level = fff::parse_kernel_level(fwd_level);
      fff::Matrix<float> out;
      if (fff::parse_precision(fwd_precision) == fff::Precision::f32) {
        out = fff::model_forward(input, model, level, fwd_threads);
      } else {
        out = fff::model_forward(input.cast<double>(), model.cast<double>(), level, fwd_threads).cast<float>();
      }
      fff::io::save_acts(out, fwd_out);
      return 0;
    }
  } catch (const fff::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return static_cast<int>(CLI::ExitCodes::ValidationError);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
