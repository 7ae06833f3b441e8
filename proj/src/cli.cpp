#include "tpi/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "tpi/decomposer.hpp"
#include "tpi/errors.hpp"
#include "tpi/experiment.hpp"
#include "tpi/lvm.hpp"
#include "tpi/parallel.hpp"
#include "tpi/tensor_io.hpp"

namespace tpi {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 0;
  std::string format = "csv";
  std::string tensor;
  std::string batch;
  std::string what = "tensor";
  std::string run;
};

ExperimentConfig load_config(const Options& o) {
  if (o.config.empty()) throw InvalidArgument("--config is required");
  if (!fs::exists(o.config)) throw InvalidArgument(fmt::format("config file '{}' does not exist", o.config));
  ExperimentConfig c = ExperimentConfig::load(o.config);
  if (o.seed) c.seed_base = *o.seed;
  return c;
}

unsigned threads_of(const Options& o) { return o.threads == 0 ? default_thread_count() : o.threads; }

void require_kind(const ExperimentConfig& c, std::initializer_list<ExperimentKind> kinds, const char* command) {
  if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) {
    throw InvalidArgument(fmt::format("'{}' cannot run a {} experiment", command, to_string(c.kind)));
  }
}

// Prints the run summary and returns the exit code for its thresholds.
int finish_run(const RunReport& report, const ExperimentConfig& c, const Options& o, std::ostream& out,
               std::ostream& err) {
  const std::string dir = !o.out.empty() ? o.out : c.output_dir;
  if (!dir.empty()) write_run(report, dir);
  if (o.format == "json") {
    json summary = to_json(report);
    summary.erase("per_seed");
    out << summary.dump(2) << "\n";
  } else if (report.kind == ExperimentKind::dynamics || report.kind == ExperimentKind::noise_sweep) {
    out << trace_csv(report);
  } else {
    out << metrics_csv(report);
  }
  if (report.regime_violation) {
    err << fmt::format("warning: k={} >= d^1.5 lies outside the rank condition\n", c.k);
  }
  for (const auto& t : report.threshold_results) {
    if (!t.pass) {
      err << fmt::format("threshold failed: {} {} = {} (min {}, max {})\n", t.threshold.metric, t.threshold.stat,
                         format_double(t.value), t.threshold.min ? format_double(*t.threshold.min) : "-",
                         t.threshold.max ? format_double(*t.threshold.max) : "-");
    }
  }
  return report.pass() ? kExitPass : kExitAcceptanceFailure;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load_config(o);
  if (o.out.empty()) throw InvalidArgument("generate needs --out <file>");
  const std::uint64_t seed = c.seed_base;
  json meta = {{"config_hash", c.hash()}, {"seed", seed}, {"what", o.what}};
  if (o.what == "tensor" || o.what == "dense") {
    const FactoredTensor3 tensor = experiment_tensor(c, seed);
    if (o.what == "tensor") {
      io::save(o.out, tensor);
    } else {
      io::save(o.out, densify(tensor));
    }
  } else if (o.what == "samples") {
    if (c.n_values.empty()) throw InvalidArgument("generate samples needs n in the config");
    const MixtureModel model = experiment_model(c, seed);
    const SampleBatch batch = sample_multiview(model, c.n_values.front(), derive_seed(seed, 10));
    io::save(o.out, batch.views);
    meta["n"] = c.n_values.front();
  } else if (o.what == "model") {
    const MixtureModel model = experiment_model(c, seed);
    io::save(o.out, model.population_tensor());
  } else {
    throw InvalidArgument(fmt::format("--what must be tensor, dense, samples or model, got '{}'", o.what));
  }
  io::write_sidecar(o.out, meta);
  out << fmt::format("wrote {}\n", o.out);
  return kExitPass;
}

// Decomposes a stored tensor; inits come from a stored sample batch (view 1)
// or from random unit vectors.
int cmd_decompose_file(const Options& o, const ExperimentConfig& c, std::ostream& out) {
  const auto records = io::load(o.tensor);
  if (records.size() != 1) throw InvalidArgument("--tensor file must hold exactly one tensor record");
  const Tensor3* tensor = nullptr;
  if (const auto* dense = std::get_if<DenseTensor3>(&records.front())) tensor = dense;
  if (const auto* factored = std::get_if<FactoredTensor3>(&records.front())) tensor = factored;
  if (tensor == nullptr) throw InvalidArgument("--tensor file holds a matrix, not a tensor");

  Matrix inits;
  if (!o.batch.empty()) {
    SampleBatch batch;
    for (const auto& r : io::load(o.batch)) {
      const auto* m = std::get_if<Matrix>(&r);
      if (m == nullptr) throw InvalidArgument("--batch file must hold matrices");
      batch.views.push_back(*m);
    }
    inits = sample_inits(batch, c.max_inits);
  } else {
    const Index count = c.init_count > 0 ? c.init_count : std::max<Index>(c.k, tensor->dim());
    inits = random_components(tensor->dim(), count, derive_seed(c.seed_base, 7));
  }
  const DecompositionResult result = decompose(*tensor, inits, c.power, c.cluster, threads_of(o));
  json report = to_json(result);
  report["config_hash"] = c.hash();
  if (const auto* factored = std::get_if<FactoredTensor3>(&records.front());
      factored != nullptr && result.size() > 0 && factored->symmetric()) {
    report["match"] = to_json(match_and_score(result.estimates, factored->components()));
  }
  const std::string dir = !o.out.empty() ? o.out : c.output_dir;
  if (!dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ResourceError(fmt::format("cannot create '{}'", dir));
    io::save(fs::path(dir) / "estimates.tpi", std::vector<Matrix>{result.estimates});
    std::ofstream(fs::path(dir) / "decomposition.json") << report.dump(2) << "\n";
  }
  if (o.format == "json") {
    out << report.dump(2) << "\n";
  } else {
    out << fmt::format("# config_hash={}\nindex,weight,cluster_size,iterations\n", c.hash());
    for (Index i = 0; i < result.size(); ++i) {
      out << fmt::format("{},{},{},{}\n", i, format_double(result.weights(i)),
                         result.cluster_sizes[static_cast<std::size_t>(i)],
                         result.diagnostics[static_cast<std::size_t>(i)].iterations);
    }
  }
  return kExitPass;
}

int cmd_decompose(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig c = load_config(o);
  if (!o.tensor.empty()) return cmd_decompose_file(o, c, out);
  require_kind(c, {ExperimentKind::recovery, ExperimentKind::sample_complexity}, "decompose");
  return finish_run(run_experiment(c, threads_of(o)), c, o, out, err);
}

int cmd_dynamics(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig c = load_config(o);
  require_kind(c, {ExperimentKind::dynamics, ExperimentKind::noise_sweep}, "dynamics");
  return finish_run(run_experiment(c, threads_of(o)), c, o, out, err);
}

int cmd_probe(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig c = load_config(o);
  require_kind(c, {ExperimentKind::probe}, "probe");
  const RunReport report = run_experiment(c, threads_of(o));
  const std::string dir = !o.out.empty() ? o.out : c.output_dir;
  if (!dir.empty()) write_run(report, dir);
  if (o.format == "json") {
    out << json{{"config_hash", report.config_hash}, {"details", report.details}, {"pass", report.pass()}}.dump(2)
        << "\n";
  } else {
    out << metrics_csv(report);
  }
  for (const auto& t : report.threshold_results)
    if (!t.pass) err << fmt::format("threshold failed: {} {}\n", t.threshold.metric, t.threshold.stat);
  return report.pass() ? kExitPass : kExitAcceptanceFailure;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.run.empty()) throw InvalidArgument("report needs --run <directory>");
  const json report = load_run(o.run);
  const std::string hash = report.at("config_hash").get<std::string>();
  if (!o.config.empty()) {
    const std::string expected = load_config(o).hash();
    if (expected != hash) {
      throw InvalidArgument(fmt::format("run was produced by config {} but --config hashes to {}", hash, expected));
    }
  }
  if (o.format == "json") {
    out << json{{"config_hash", hash},
                {"aggregates", report.at("aggregates")},
                {"success_rate", report.at("success_rate")},
                {"thresholds", report.at("thresholds")},
                {"pass", report.at("pass")}}
               .dump(2)
        << "\n";
    return kExitPass;
  }
  std::vector<Aggregate> aggregates;
  for (const auto& a : report.at("aggregates")) {
    Aggregate g;
    g.metric = a.at("metric").get<std::string>();
    g.mean = a.at("mean").get<double>();
    g.median = a.at("median").get<double>();
    g.q1 = a.at("q1").get<double>();
    g.q3 = a.at("q3").get<double>();
    g.iqr = a.at("iqr").get<double>();
    g.min = a.at("min").get<double>();
    g.max = a.at("max").get<double>();
    aggregates.push_back(g);
  }
  out << aggregates_csv(hash, aggregates);
  return kExitPass;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Overcomplete tensor power iteration experiments", "tpi"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(TPI_VERSION));
  Options o;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON, schema v1)");
    sub->add_option("--seed", o.seed, "Override the base seed of the config");
    sub->add_option("--out", o.out, "Output directory (file for generate)");
    sub->add_option("--threads", o.threads, "Worker threads; 0 reads TPI_THREADS or the hardware count");
    sub->add_option("--format", o.format, "Table format printed to stdout")->check(CLI::IsMember({"csv", "json"}));
  };

  CLI::App* generate = app.add_subcommand("generate", "Write a model tensor or sample batch to the binary container");
  add_common(generate);
  generate->add_option("--what", o.what, "tensor | dense | samples | model")
      ->check(CLI::IsMember({"tensor", "dense", "samples", "model"}));

  CLI::App* decompose_cmd = app.add_subcommand("decompose", "Run a recovery experiment or decompose a stored tensor");
  add_common(decompose_cmd);
  decompose_cmd->add_option("--tensor", o.tensor, "Stored tensor to decompose instead of generating one");
  decompose_cmd->add_option("--batch", o.batch, "Stored sample batch whose first view provides the starts");

  CLI::App* dynamics = app.add_subcommand("dynamics", "Single-start power iteration traces across seeds");
  add_common(dynamics);

  CLI::App* probe = app.add_subcommand("probe", "Monte Carlo checks of the analysis lemmas");
  add_common(probe);

  CLI::App* report = app.add_subcommand("report", "Re-render tables from a stored run");
  add_common(report);
  report->add_option("--run", o.run, "Run directory holding report.json and metrics.csv");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitPass;
  } catch (const CLI::CallForVersion&) {
    out << TPI_VERSION << "\n";
    return kExitPass;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(o, out);
    if (decompose_cmd->parsed()) return cmd_decompose(o, out, err);
    if (dynamics->parsed()) return cmd_dynamics(o, out, err);
    if (probe->parsed()) return cmd_probe(o, out, err);
    if (report->parsed()) return cmd_report(o, out);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ResourceError& e) {
    err << "resource error: " << e.what() << "\n";
    return kExitResource;
  } catch (const std::bad_alloc&) {
    err << "resource error: out of memory\n";
    return kExitResource;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitResource;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace tpi
