// Command-line front end: training, certification and reporting.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "dcd/accounting.hpp"
#include "dcd/bench.hpp"
#include "dcd/certify.hpp"
#include "dcd/checkpoint.hpp"
#include "dcd/config.hpp"
#include "dcd/equivalence.hpp"
#include "dcd/phi.hpp"
#include "dcd/rng.hpp"
#include "dcd/train.hpp"

namespace fs = std::filesystem;
using namespace dcd;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  bool golden = false;
};

RunConfig load_config(const Globals& g) {
  Config c = g.config_path.empty() ? Config{} : Config::load(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  RunConfig r = run_config_from(c);
  if (g.seed_set) r.seed = g.seed;
  if (!g.out.empty()) r.out_dir = g.out;
  return r;
}

std::map<std::string, ModelSpec> model_presets() {
  std::map<std::string, ModelSpec> m;
  for (const auto& row : golden_rows()) m[row.id] = row.spec;
  for (const auto& [name, kind] : {std::pair{"desk-static", DeskKind::Static}, std::pair{"desk-dcd", DeskKind::Dcd},
                                   std::pair{"desk-vanilla", DeskKind::Vanilla}}) {
    ModelSpec s;
    s.arch = "desk";
    s.desk.kind = kind;
    m[name] = s;
  }
  return m;
}

std::string preset_list() {
  std::string s;
  for (const auto& [name, spec] : model_presets()) s += (s.empty() ? "" : ", ") + name;
  return s;
}

ModelSpec select_model(const std::string& preset, const RunConfig& cfg) {
  if (preset.empty()) return cfg.model;
  const auto presets = model_presets();
  const auto it = presets.find(preset);
  if (it == presets.end()) throw ConfigError("unknown model '" + preset + "' (known: " + preset_list() + ")");
  return it->second;
}

std::string out_dir(const Globals& g, const std::string& fallback) {
  const std::string d = g.out.empty() ? fallback : g.out;
  fs::create_directories(d);
  return d;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

int cmd_train(const Globals& g, bool compare, const std::vector<std::uint64_t>& seeds) {
  const RunConfig cfg = load_config(g);
  if (compare) {
    const ComparisonReport r = run_comparison(cfg, seeds);
    std::cout << r.comparison_csv();
    bool ok = true;
    for (const auto& v : comparison_variants()) std::cout << v << " mean val_acc " << r.mean_val_acc(v) << '\n';
    for (const auto& run : r.runs) ok = ok && !run.result.diverged;
    std::cout << "wrote " << (fs::path(cfg.out_dir) / "comparison.csv").string() << " and curves.csv\n";
    return ok ? 0 : 1;
  }
  const TrainResult r = run_training(cfg);
  for (const auto& m : r.history) std::cout << metrics_csv_row(m);
  if (r.diverged) {
    std::cerr << "training diverged at step " << r.failed_step << ": " << r.error << '\n';
    return 1;
  }
  std::cout << "wrote " << r.metrics_path << " and " << r.checkpoint_path << '\n';
  return 0;
}

int cmd_gradcheck(const Globals& g, const std::vector<std::string>& variants, bool model, double tol, double step) {
  LayerCheckOptions opts;
  opts.tolerance = tol;
  opts.step = step;
  if (g.seed_set) opts.seed = g.seed;
  std::string csv = "variant,mode,tensor,max_rel_error,tolerance,passed\n";
  bool all = true;
  auto emit = [&](const std::string& name, bool train, const GradCheckReport& rep) {
    for (const auto& t : rep.tensors) {
      const bool ok = t.max_rel_error <= rep.tolerance;
      csv += name + ',' + (train ? "train" : "eval") + ',' + t.name + ',' + format_number(t.max_rel_error) + ',' +
             format_number(rep.tolerance) + ',' + (ok ? "true" : "false") + '\n';
    }
    std::cout << (rep.passed ? "PASS " : "FAIL ") << name << " (" << (train ? "train" : "eval")
              << ") max relative error " << rep.max_rel_error() << '\n';
    all = all && rep.passed;
  };
  if (model) {
    const RunConfig cfg = load_config(g);
    auto [train_set, test_set] = make_task(cfg.task, cfg.seed);
    const ModelSpec spec = fit_model_to_task(cfg.model, cfg.task, train_set.classes);
    for (bool train : {true, false}) {
      Network net(build_model(spec), derive_seed(opts.seed, "model"));
      randomize_parameters(net.parameters(), derive_seed(opts.seed, "params"));
      const std::vector<std::size_t> idx{0, 1};
      opts.train = train;
      emit("model", train, gradcheck_network(net, train_set.gather(idx), opts));
    }
  }
  if (!model || !variants.empty()) {
    for (const auto& v : certify_variants(variants, opts)) emit(v.variant, v.train, v.report);
  }
  write_file(fs::path(out_dir(g, "runs/gradcheck")) / "gradcheck.csv", csv);
  return all ? 0 : 1;
}

int cmd_equivalence(const Globals& g, const EquivalenceOptions& base) {
  EquivalenceOptions opts = base;
  if (g.seed_set) opts.seed = g.seed;
  const auto results = run_equivalence(opts);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.suite << '/' << r.name << " over " << r.instances
              << " instances: max deviation " << r.max_deviation << " (tolerance " << r.tolerance << ")\n";
    ok = ok && r.passed();
  }
  std::vector<MechanismRow> mech;
  for (std::size_t c : opts.channels)
    for (std::size_t k : opts.kernels) {
      const std::size_t l = default_latent_dim(c);
      for (auto& row : compare_aggregation_mechanisms(c, k, l, 5, opts.seed)) {
        if (row.rank > row.rank_bound) {
          std::cout << "FAIL " << row.mechanism << " rank " << row.rank << " exceeds bound " << row.rank_bound << '\n';
          ok = false;
        }
        mech.push_back(row);
      }
    }
  const fs::path dir = out_dir(g, "runs/equivalence");
  write_file(dir / "equivalence.csv", equivalence_csv(results));
  write_file(dir / "mechanisms.csv", mechanism_csv(mech));
  return ok ? 0 : 1;
}

int cmd_count(const Globals& g, const std::string& preset, std::size_t resolution) {
  const fs::path dir = out_dir(g, "runs/count");
  if (g.golden) {
    std::vector<GoldenResult> results;
    bool ok = true;
    for (const auto& row : golden_rows()) {
      results.push_back(check_golden(row));
      const GoldenResult& r = results.back();
      std::cout << (r.passed() ? "PASS " : "FAIL ") << row.id << ": params " << r.params << " (target " << row.params
                << " +/- " << row.params_tol << ")";
      if (row.madds > 0) std::cout << ", MAdds " << r.madds << " (target " << row.madds << " +/- " << row.madds_rel_tol * 100 << "%)";
      std::cout << '\n';
      ok = ok && r.passed();
    }
    write_file(dir / "golden.csv", golden_csv(results));
    return ok ? 0 : 1;
  }
  const RunConfig cfg = preset.empty() ? load_config(g) : RunConfig{};
  const ModelGraph graph = build_model(select_model(preset, cfg));
  const CountReport report = resolution ? count_madds(graph, resolution) : count_params(graph);
  std::cout << report.table();
  write_file(dir / "counts.csv", report.csv());
  write_file(dir / "categories.csv", report.category_csv());
  return 0;
}

int cmd_analyze_phi(const Globals& g, const std::string& checkpoint, const std::string& split) {
  LoadedRun run = load_run(checkpoint);
  auto [train_set, test_set] = make_task(run.config.task, run.config.seed);
  if (split != "train" && split != "test") throw ConfigError("--split must be train or test");
  const PhiVarianceReport report = analyze_phi(*run.net, split == "train" ? train_set : test_set);
  std::cout << report.csv();
  write_file(fs::path(out_dir(g, "runs/phi")) / "phi.csv", report.csv());
  return 0;
}

int cmd_bench(const Globals& g, const std::string& preset, const BenchOptions& base) {
  BenchOptions opts = base;
  if (g.seed_set) opts.seed = g.seed;
  const RunConfig cfg = preset.empty() ? load_config(g) : RunConfig{};
  const ModelSpec spec = select_model(preset, cfg);
  const BenchReport report = bench_model(spec, preset.empty() ? spec.arch : preset, opts);
  std::cout << report.csv();
  write_file(fs::path(out_dir(g, "runs/bench")) / "bench.csv", report.csv());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic convolution toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Run config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Config override KEY=VALUE (repeatable)");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Seed override");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--golden", g.golden, "count: compare against the reference budget table");

  int status = 0;

  auto* train = app.add_subcommand("train", "Train a model and write per-epoch metrics");
  bool compare = false;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  train->add_flag("--compare", compare, "Run the static / dcd / vanilla comparison sweep");
  train->add_option("--seeds", seeds, "Seeds for --compare")->delimiter(',');
  train->callback([&] { status = cmd_train(g, compare, seeds); });

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference certification of layer gradients");
  std::vector<std::string> variants;
  bool model = false;
  double tol = 1e-6, step = 1e-5;
  gradcheck->add_option("--variant", variants, "Layer variant (repeatable); default all")->delimiter(',');
  gradcheck->add_flag("--model", model, "Check the configured model instead of single layers");
  gradcheck->add_option("--tol", tol, "Relative tolerance");
  gradcheck->add_option("--step", step, "Central-difference step");
  gradcheck->callback([&] { status = cmd_gradcheck(g, variants, model, tol, step); });

  auto* equivalence = app.add_subcommand("equivalence", "Cross-check the kernel aggregation forms");
  EquivalenceOptions eq;
  equivalence->add_option("--trials", eq.trials, "Random instances for the aggregation identity");
  equivalence->add_option("--channels", eq.channels, "Channel counts")->delimiter(',');
  equivalence->add_option("--kernels", eq.kernels, "Kernel counts")->delimiter(',');
  equivalence->add_option("--rank1", eq.rank1_instances, "Instances for the rank-1 suites");
  equivalence->callback([&] { status = cmd_equivalence(g, eq); });

  auto* count = app.add_subcommand("count", "Parameter and MAdds accounting");
  std::string count_model;
  std::size_t resolution = 0;
  count->add_option("--model", count_model, "Model preset (default: the config's model)");
  count->add_option("--resolution", resolution, "Input resolution for MAdds (default: the model's)");
  count->callback([&] { status = cmd_count(g, count_model, resolution); });

  auto* phi = app.add_subcommand("analyze-phi", "Variance of the fusion coefficients of a trained model");
  std::string checkpoint, split = "test";
  phi->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
  phi->add_option("--split", split, "Dataset split: train or test");
  phi->callback([&] { status = cmd_analyze_phi(g, checkpoint, split); });

  auto* bench = app.add_subcommand("bench", "Batch-size-1 latency against the static counterpart");
  std::string bench_model_name;
  BenchOptions bo;
  bench->add_option("--model", bench_model_name, "Model preset (default: the config's model)");
  bench->add_option("--repeats", bo.repeats, "Timed passes");
  bench->add_option("--warmup", bo.warmup, "Untimed passes before timing");
  bench->callback([&] { status = cmd_bench(g, bench_model_name, bo); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return status;
}
