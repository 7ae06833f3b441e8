#include "tpi/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "tpi/errors.hpp"
#include "tpi/lvm.hpp"
#include "tpi/parallel.hpp"
#include "tpi/probe.hpp"
#include "tpi/rng.hpp"

#ifndef TPI_VERSION
#define TPI_VERSION "0.0.0"
#endif

namespace tpi {

using nlohmann::json;

ExperimentKind parse_experiment_kind(const std::string& text) {
  if (text == "recovery") return ExperimentKind::recovery;
  if (text == "dynamics") return ExperimentKind::dynamics;
  if (text == "noise-sweep") return ExperimentKind::noise_sweep;
  if (text == "sample-complexity") return ExperimentKind::sample_complexity;
  if (text == "probe") return ExperimentKind::probe;
  throw InvalidArgument(fmt::format("unknown experiment kind '{}'", text));
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::recovery: return "recovery";
    case ExperimentKind::dynamics: return "dynamics";
    case ExperimentKind::noise_sweep: return "noise-sweep";
    case ExperimentKind::sample_complexity: return "sample-complexity";
    case ExperimentKind::probe: return "probe";
  }
  return "unknown";
}

namespace {

ComponentKind parse_component_kind(const std::string& text) {
  if (text == "unit_sphere") return ComponentKind::unit_sphere;
  if (text == "gaussian") return ComponentKind::gaussian;
  if (text == "orthonormal") return ComponentKind::orthonormal;
  throw InvalidArgument(fmt::format("unknown component distribution '{}'", text));
}

std::string component_name(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::unit_sphere: return "unit_sphere";
    case ComponentKind::gaussian: return "gaussian";
    case ComponentKind::orthonormal: return "orthonormal";
  }
  return "unknown";
}

InitKind parse_init_kind(const std::string& text) {
  if (text == "columns_plus_noise") return InitKind::columns_plus_noise;
  if (text == "random") return InitKind::random;
  if (text == "samples") return InitKind::samples;
  throw InvalidArgument(fmt::format("unknown init kind '{}'", text));
}

std::string init_name(InitKind kind) {
  switch (kind) {
    case InitKind::columns_plus_noise: return "columns_plus_noise";
    case InitKind::random: return "random";
    case InitKind::samples: return "samples";
  }
  return "unknown";
}

// Reads fields from one JSON object and rejects anything it did not read.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw InvalidArgument(fmt::format("{}: expected an object", where_));
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InvalidArgument(fmt::format("{}.{}: {}", where_, key, e.what()));
    }
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    T value{};
    read(key, value);
    out = value;
  }

  const json& sub(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw InvalidArgument(fmt::format("{}: unknown field '{}'", where_, item.key()));
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(); }

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Fields f(j, "config");
  f.read("schema_version", c.schema_version);
  if (c.schema_version != 1) {
    throw InvalidArgument(fmt::format("unsupported schema_version {}", c.schema_version));
  }
  std::string kind;
  f.read("kind", kind);
  if (kind.empty()) throw InvalidArgument("config: missing field 'kind'");
  c.kind = parse_experiment_kind(kind);
  f.read("name", c.name);
  f.read("d", c.d);
  f.read("k", c.k);
  if (f.has("n")) {
    const json& n = f.sub("n");
    if (n.is_array()) {
      c.n_values = n.get<std::vector<Index>>();
    } else if (n.is_number_integer()) {
      c.n_values = {n.get<Index>()};
    } else {
      throw InvalidArgument("config.n: expected an integer or an array of integers");
    }
  }
  f.read("zeta", c.zeta);
  f.read("snr", c.snr);
  std::string components = component_name(c.components);
  f.read("components", components);
  c.components = parse_component_kind(components);
  f.read("weights", c.weights);
  f.read("init_correlation", c.init_correlation);
  std::string source = to_string(c.source);
  f.read("source", source);
  c.source = parse_tensor_source(source);
  f.read("success_threshold", c.success_threshold);
  f.read("recovery_threshold", c.recovery_threshold);
  f.read("success_fraction", c.success_fraction);
  f.read("output_dir", c.output_dir);

  if (f.has("inits")) {
    Fields g(f.sub("inits"), "config.inits");
    std::string ik = init_name(c.inits);
    g.read("kind", ik);
    c.inits = parse_init_kind(ik);
    g.read("noise", c.init_noise);
    g.read("count", c.init_count);
    g.read("max", c.max_inits);
    g.finish();
  }
  if (f.has("noise")) {
    Fields g(f.sub("noise"), "config.noise");
    g.read("levels", c.noise_levels);
    g.read("norm_restarts", c.noise_norm_restarts);
    g.read("norm_iters", c.noise_norm_iters);
    g.finish();
  }
  if (f.has("seeds")) {
    Fields g(f.sub("seeds"), "config.seeds");
    g.read("count", c.seed_count);
    g.read("base", c.seed_base);
    g.finish();
  }
  c.power = PowerConfig::for_dimension(std::max<Index>(c.d, 1));
  if (f.has("power")) {
    Fields g(f.sub("power"), "config.power");
    g.read("max_iters", c.power.max_iters);
    g.read("gamma", c.power.convergence_gamma);
    std::string level = to_string(c.power.trace_level);
    g.read("trace_level", level);
    c.power.trace_level = parse_trace_level(level);
    g.finish();
  }
  if (f.has("cluster")) {
    Fields g(f.sub("cluster"), "config.cluster");
    g.read("nu", c.cluster.nu);
    g.read("refine_iters", c.cluster.refine_iters);
    g.read("max_components", c.cluster.max_components);
    g.finish();
  }
  if (f.has("probe")) {
    Fields g(f.sub("probe"), "config.probe");
    g.read("checks", c.probe.checks);
    g.read("d", c.probe.d);
    g.read("k", c.probe.k);
    g.read("trials", c.probe.trials);
    g.read("chain_length", c.probe.chain_length);
    g.read("t", c.probe.t);
    g.read("sigma2", c.probe.sigma2);
    g.finish();
  }
  if (f.has("thresholds")) {
    const json& list = f.sub("thresholds");
    if (!list.is_array()) throw InvalidArgument("config.thresholds: expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      Threshold t;
      Fields g(list[i], fmt::format("config.thresholds[{}]", i));
      g.read("metric", t.metric);
      g.read("stat", t.stat);
      g.read("min", t.min);
      g.read("max", t.max);
      g.finish();
      c.thresholds.push_back(t);
    }
  }
  f.finish();
  if (!c.zeta && c.snr && c.d > 0) c.zeta = zeta_for_snr(*c.snr, c.d);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument(fmt::format("cannot open config '{}'", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument(fmt::format("config '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json thresholds_json = json::array();
  for (const auto& t : thresholds) {
    thresholds_json.push_back({{"metric", t.metric}, {"stat", t.stat}, {"min", opt_json(t.min)}, {"max", opt_json(t.max)}});
  }
  return {{"schema_version", schema_version},
          {"kind", tpi::to_string(kind)},
          {"name", name},
          {"d", d},
          {"k", k},
          {"n", n_values},
          {"zeta", opt_json(zeta)},
          {"snr", opt_json(snr)},
          {"components", component_name(components)},
          {"weights", weights},
          {"init_correlation", init_correlation},
          {"inits", {{"kind", init_name(inits)}, {"noise", init_noise}, {"count", init_count}, {"max", max_inits}}},
          {"noise", {{"levels", noise_levels}, {"norm_restarts", noise_norm_restarts}, {"norm_iters", noise_norm_iters}}},
          {"seeds", {{"count", seed_count}, {"base", seed_base}}},
          {"power",
           {{"max_iters", power.max_iters},
            {"gamma", power.convergence_gamma},
            {"trace_level", tpi::to_string(power.trace_level)}}},
          {"cluster", {{"nu", cluster.nu}, {"refine_iters", cluster.refine_iters}, {"max_components", cluster.max_components}}},
          {"source", tpi::to_string(source)},
          {"success_threshold", success_threshold},
          {"recovery_threshold", recovery_threshold},
          {"success_fraction", success_fraction},
          {"probe",
           {{"checks", probe.checks},
            {"d", probe.d},
            {"k", probe.k},
            {"trials", probe.trials},
            {"chain_length", probe.chain_length},
            {"t", probe.t},
            {"sigma2", opt_json(probe.sigma2)}}},
          {"thresholds", thresholds_json},
          {"output_dir", output_dir}};
}

void ExperimentConfig::validate() const {
  if (kind != ExperimentKind::probe) {
    if (d < 1 || k < 1) throw InvalidArgument(fmt::format("config: need d >= 1 and k >= 1, got d={} k={}", d, k));
  }
  if (seed_count < 1) throw InvalidArgument("config: seeds.count must be >= 1");
  power.validate();
  cluster.validate();
  if (!(weights[0] > 0.0 && weights[1] >= weights[0] && std::isfinite(weights[1]))) {
    throw InvalidArgument("config: weights must satisfy 0 < lo <= hi");
  }
  if (!(init_correlation[0] > 0.0 && init_correlation[1] >= init_correlation[0] && init_correlation[1] <= 1.0)) {
    throw InvalidArgument("config: init_correlation must satisfy 0 < lo <= hi <= 1");
  }
  if (components == ComponentKind::orthonormal && k > d) {
    throw InvalidArgument("config: orthonormal components need k <= d");
  }
  for (double level : noise_levels) {
    if (!(level >= 0.0)) throw InvalidArgument("config: noise levels must be >= 0");
  }
  if (noise_norm_restarts < 1 || noise_norm_iters < 1) throw InvalidArgument("config: noise norm options must be >= 1");
  if (init_noise < 0.0) throw InvalidArgument("config: inits.noise must be >= 0");
  for (const auto& t : thresholds) {
    if (t.metric.empty()) throw InvalidArgument("config: threshold without a metric");
    static const std::set<std::string> stats = {"mean", "median", "min", "max", "q1", "q3"};
    if (!stats.count(t.stat)) throw InvalidArgument(fmt::format("config: unknown threshold stat '{}'", t.stat));
    if (!t.min && !t.max) throw InvalidArgument(fmt::format("config: threshold on '{}' has no bound", t.metric));
  }
  switch (kind) {
    case ExperimentKind::recovery:
      if (inits == InitKind::random && init_count < 1) throw InvalidArgument("config: random inits need inits.count >= 1");
      if (inits == InitKind::samples) throw InvalidArgument("config: recovery runs take column or random inits");
      break;
    case ExperimentKind::noise_sweep:
      if (noise_levels.empty()) throw InvalidArgument("config: noise-sweep needs noise.levels");
      break;
    case ExperimentKind::sample_complexity:
      if (n_values.empty()) throw InvalidArgument("config: sample-complexity needs n");
      for (Index n : n_values)
        if (n < 1) throw InvalidArgument("config: n must be >= 1");
      if (!zeta || *zeta < 0.0) throw InvalidArgument("config: sample-complexity needs zeta >= 0 (or snr)");
      break;
    case ExperimentKind::probe: {
      static const std::set<std::string> known = {"conditioning", "iterative", "fresh", "mixed"};
      if (probe.checks.empty()) throw InvalidArgument("config: probe.checks is empty");
      for (const auto& c : probe.checks)
        if (!known.count(c)) throw InvalidArgument(fmt::format("config: unknown probe check '{}'", c));
      if (probe.d < 1 || probe.k < 1) throw InvalidArgument("config: probe dims must be >= 1");
      break;
    }
    case ExperimentKind::dynamics:
      if (noise_levels.size() > 1) throw InvalidArgument("config: dynamics takes at most one noise level");
      break;
  }
}

std::string ExperimentConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

bool ExperimentConfig::regime_violation() const {
  return static_cast<double>(k) >= std::pow(static_cast<double>(d), 1.5);
}

double SeedMetrics::get(const std::string& name) const {
  for (const auto& [key, value] : values)
    if (key == name) return value;
  throw InvalidArgument(fmt::format("no metric '{}'", name));
}

double Aggregate::stat(const std::string& name) const {
  if (name == "mean") return mean;
  if (name == "median") return median;
  if (name == "min") return min;
  if (name == "max") return max;
  if (name == "q1") return q1;
  if (name == "q3") return q3;
  throw InvalidArgument(fmt::format("unknown statistic '{}'", name));
}

Aggregate aggregate(const std::string& metric, std::vector<double> values) {
  Aggregate a;
  a.metric = metric;
  if (values.empty()) return a;
  std::sort(values.begin(), values.end());
  const auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  double total = 0.0;
  for (double v : values) total += v;
  a.mean = total / static_cast<double>(values.size());
  a.median = quantile(0.5);
  a.q1 = quantile(0.25);
  a.q3 = quantile(0.75);
  a.iqr = a.q3 - a.q1;
  a.min = values.front();
  a.max = values.back();
  return a;
}

bool RunReport::pass() const {
  return std::all_of(threshold_results.begin(), threshold_results.end(), [](const auto& t) { return t.pass; });
}

// ---------------------------------------------------------------------------
// Per-seed experiment bodies

namespace {

struct SeedOutput {
  SeedMetrics metrics;
  std::vector<RunReport::TraceRow> rows;
  json details;
};

Matrix make_components(const ExperimentConfig& c, std::uint64_t seed) {
  switch (c.components) {
    case ComponentKind::unit_sphere: return random_components(c.d, c.k, seed, ComponentDistribution::unit_sphere);
    case ComponentKind::gaussian: return random_components(c.d, c.k, seed, ComponentDistribution::gaussian);
    case ComponentKind::orthonormal: {
      const Matrix g = random_components(c.d, c.d, seed, ComponentDistribution::gaussian);
      Eigen::HouseholderQR<Matrix> qr(g);
      return Matrix(qr.householderQ() * Matrix::Identity(c.d, c.k));
    }
  }
  throw InvalidArgument("unknown component distribution");
}

Vector make_weights(const ExperimentConfig& c, std::uint64_t seed) {
  Vector w(c.k);
  CounterRng rng(seed, 0);
  for (Index j = 0; j < c.k; ++j) w(j) = c.weights[0] + (c.weights[1] - c.weights[0]) * rng.uniform();
  if (c.weights[0] == c.weights[1]) w.setConstant(c.weights[0]);
  return w;
}

FactoredTensor3 make_tensor(const Matrix& raw, const Vector& weights) {
  return FactoredTensor3::absorb_norms(raw, weights);
}

// Unit start with |<x0, a>| = c exactly: c a + sqrt(1 - c^2) g, g a unit
// Gaussian direction orthogonal to a.
Vector start_with_correlation(const Vector& a, double c, CounterRng& rng) {
  Vector g(a.size());
  for (Index i = 0; i < g.size(); ++i) g(i) = rng.normal();
  g -= a.dot(g) * a;
  g.normalize();
  return c * a + std::sqrt(std::max(0.0, 1.0 - c * c)) * g;
}

void add(SeedMetrics& m, std::string name, double value) { m.values.emplace_back(std::move(name), value); }

std::string suffix(std::size_t index, std::size_t count) {
  return count > 1 ? fmt::format("_{}", index) : std::string();
}

SeedOutput run_dynamics_seed(const ExperimentConfig& c, std::uint64_t seed) {
  SeedOutput out;
  out.metrics.seed = seed;
  const FactoredTensor3 tensor = experiment_tensor(c, seed);
  const Vector a1 = tensor.components().col(0);
  CounterRng rng(derive_seed(seed, 4), 0);
  const double target = c.init_correlation[0] + (c.init_correlation[1] - c.init_correlation[0]) * rng.uniform();
  const Vector x0 = start_with_correlation(a1, target, rng);

  PowerConfig pc = c.power;
  pc.track_target = 0;
  std::vector<double> levels = c.noise_levels;
  if (levels.empty()) levels.push_back(0.0);
  const double scale = std::sqrt(static_cast<double>(c.k)) / static_cast<double>(c.d);
  std::optional<DenseTensor3> base_noise;

  add(out.metrics, "init_correlation", target);
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const std::string sfx = suffix(li, levels.size());
    IterationTrace trace;
    const bool noisy = levels[li] > 0.0;
    if (noisy) {
      if (!base_noise) base_noise = random_symmetric_tensor(c.d, derive_seed(seed, 3));
      const SpectralNormOptions opts{c.noise_norm_restarts, c.noise_norm_iters, derive_seed(seed, 5)};
      DenseTensor3 noise = scale_noise_to(*base_noise, levels[li] * scale, opts);
      const PerturbedTensor perturbed(tensor, std::move(noise), levels[li] * scale);
      trace = run_power_with_shadow(perturbed, x0, pc, &tensor);
    } else {
      trace = run_power(tensor, x0, pc, &tensor);
    }
    const double final_corr = trace.final_correlation.value_or(0.0);
    add(out.metrics, "final_correlation" + sfx, final_corr);
    add(out.metrics, "iterations" + sfx, trace.iterations);
    add(out.metrics, "success" + sfx, final_corr >= c.success_threshold ? 1.0 : 0.0);
    add(out.metrics, "quadratic_ok" + sfx, quadratic_progress_holds(trace, c.d, c.k) ? 1.0 : 0.0);
    if (noisy) {
      double max_xi = 0.0;
      for (const auto& s : trace.steps) max_xi = std::max(max_xi, s.noise_component_norm.value_or(0.0));
      add(out.metrics, "max_noise_norm" + sfx, max_xi);
    }
    for (const auto& s : trace.steps) {
      out.rows.push_back({seed, s.iteration, s.target_correlation.value_or(0.0), s.noise_component_norm,
                          levels.size() > 1 || noisy ? std::optional<double>(levels[li]) : std::nullopt});
    }
  }
  return out;
}

void add_match_metrics(SeedMetrics& m, const std::string& sfx, const DecompositionResult& result,
                       const Matrix& truth, const Vector* true_weights, double threshold) {
  const Index k = truth.cols();
  add(m, "estimates" + sfx, static_cast<double>(result.size()));
  add(m, "duplicates_dropped" + sfx, static_cast<double>(result.duplicates_dropped));
  if (result.size() == 0) {
    add(m, "recovered_fraction" + sfx, 0.0);
    add(m, "min_correlation" + sfx, 0.0);
    add(m, "frobenius_error" + sfx, std::sqrt(static_cast<double>(k)) * std::sqrt(2.0));
    add(m, "frobenius_ratio" + sfx, std::sqrt(2.0));
    if (true_weights) add(m, "max_weight_error" + sfx, true_weights->cwiseAbs().maxCoeff());
    return;
  }
  const MatchReport match = match_and_score(result.estimates, truth);
  add(m, "recovered_fraction" + sfx, static_cast<double>(match.recovered(threshold)) / static_cast<double>(k));
  double min_corr = match.missed.empty() ? 1.0 : 0.0;
  for (double corr : match.per_component_correlations) min_corr = std::min(min_corr, corr);
  add(m, "min_correlation" + sfx, min_corr);
  add(m, "frobenius_error" + sfx, match.frobenius_error);
  add(m, "frobenius_ratio" + sfx, match.frobenius_error / std::sqrt(static_cast<double>(k)));
  if (true_weights) {
    double werr = 0.0;
    for (std::size_t i = 0; i < match.permutation.size(); ++i) {
      if (!match.permutation[i]) continue;
      werr = std::max(werr, std::abs(result.weights(static_cast<Index>(i)) - (*true_weights)(*match.permutation[i])));
    }
    for (Index j : match.missed) werr = std::max(werr, std::abs((*true_weights)(j)));
    add(m, "max_weight_error" + sfx, werr);
  }
}

SeedOutput run_recovery_seed(const ExperimentConfig& c, std::uint64_t seed, unsigned inner_threads) {
  SeedOutput out;
  out.metrics.seed = seed;
  const FactoredTensor3 tensor = experiment_tensor(c, seed);
  const Matrix& truth = tensor.components();
  CounterRng rng(derive_seed(seed, 6), 0);
  Matrix inits;
  if (c.inits == InitKind::columns_plus_noise) {
    inits = truth;
    const double sd = c.init_noise / std::sqrt(static_cast<double>(c.d));
    for (Index j = 0; j < inits.cols(); ++j)
      for (Index i = 0; i < inits.rows(); ++i) inits(i, j) += sd * rng.normal();
    inits = normalize_columns(std::move(inits));
  } else {
    inits = random_components(c.d, c.init_count, derive_seed(seed, 7), ComponentDistribution::unit_sphere);
  }
  PowerConfig pc = c.power;
  pc.track_target.reset();
  const DecompositionResult result = decompose(tensor, inits, pc, c.cluster, inner_threads);
  const Vector true_weights = tensor.weights();
  add_match_metrics(out.metrics, "", result, truth, &true_weights, c.recovery_threshold);
  add(out.metrics, "success", out.metrics.get("recovered_fraction") >= 1.0 ? 1.0 : 0.0);
  return out;
}

SeedOutput run_sample_seed(const ExperimentConfig& c, std::uint64_t seed, unsigned inner_threads) {
  SeedOutput out;
  out.metrics.seed = seed;
  const MixtureModel model = experiment_model(c, seed);
  const Matrix& truth = model.factor(0);
  LearnConfig lc;
  lc.power = c.power;
  lc.power.track_target.reset();
  lc.cluster = c.cluster;
  lc.max_inits = c.max_inits;
  lc.threads = inner_threads;
  double all_success = 1.0;
  for (std::size_t ni = 0; ni < c.n_values.size(); ++ni) {
    const std::string sfx = suffix(ni, c.n_values.size());
    const SampleBatch batch = sample_multiview(model, c.n_values[ni], derive_seed(seed, 10 + ni));
    const Index used = c.max_inits > 0 ? std::min(c.max_inits, batch.size()) : batch.size();
    std::set<Index> seen(batch.labels->begin(), batch.labels->begin() + used);
    add(out.metrics, "n" + sfx, static_cast<double>(c.n_values[ni]));
    add(out.metrics, "coverage" + sfx, static_cast<double>(seen.size()) / static_cast<double>(c.k));
    const DecompositionResult result = learn_multiview(batch, c.source, lc, &model);
    add_match_metrics(out.metrics, sfx, result, truth, nullptr, c.recovery_threshold);
    const double ok = out.metrics.get("recovered_fraction" + sfx) >= c.success_fraction ? 1.0 : 0.0;
    add(out.metrics, "success" + sfx, ok);
    all_success = std::min(all_success, ok);
  }
  if (c.n_values.size() > 1) add(out.metrics, "success", all_success);
  return out;
}

SeedOutput run_probe_seed(const ExperimentConfig& c, std::uint64_t seed, unsigned inner_threads) {
  SeedOutput out;
  out.metrics.seed = seed;
  out.details = json::object();
  const ProbeSettings& p = c.probe;
  double all = 1.0;
  for (const auto& check : p.checks) {
    bool pass = false;
    if (check == "conditioning") {
      const double s2 = p.sigma2.value_or(1.0 / static_cast<double>(p.d));
      const ConditioningCheck r = check_conditioning_lemma(p.d, p.k, s2, p.trials, seed, std::nullopt, std::nullopt,
                                                           inner_threads);
      pass = r.pass;
      add(out.metrics, "conditioning_mean_max_z", r.mean_max_z);
      add(out.metrics, "conditioning_cov_max_z", r.cov_max_z);
      add(out.metrics, "conditioning_orthogonality", r.orthogonality);
      out.details[check] = to_json(r);
    } else if (check == "iterative") {
      const ConditioningCheck r = check_iterative_conditioning(p.d, p.k, p.chain_length, p.trials, seed, inner_threads);
      pass = r.pass;
      add(out.metrics, "iterative_variance_ratio", r.variance_ratio);
      add(out.metrics, "iterative_orthogonality", r.orthogonality);
      add(out.metrics, "iterative_closed_form_gap", r.closed_form_gap);
      out.details[check] = to_json(r);
    } else if (check == "fresh") {
      const FreshRandomnessReport r = check_fresh_randomness(p.d, p.k, p.t, p.trials, seed, inner_threads);
      pass = r.pass;
      double worst = 1.0;
      for (const auto& fc : r.cases) worst = std::min(worst, fc.pass_rate);
      add(out.metrics, "fresh_min_pass_rate", worst);
      out.details[check] = to_json(r);
    } else if (check == "mixed") {
      const MixedNormReport r = check_mixed_norm_bound(p.d, p.k, p.trials, seed, inner_threads);
      pass = r.pass;
      add(out.metrics, "mixed_fitted_constant", r.fitted_constant);
      out.details[check] = to_json(r);
    }
    add(out.metrics, check + "_pass", pass ? 1.0 : 0.0);
    all = std::min(all, pass ? 1.0 : 0.0);
  }
  add(out.metrics, "success", all);
  return out;
}

}  // namespace

FactoredTensor3 experiment_tensor(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  return make_tensor(make_components(config, derive_seed(seed, 1)), make_weights(config, derive_seed(seed, 2)));
}

MixtureModel experiment_model(const ExperimentConfig& config, std::uint64_t seed) {
  if (!config.zeta) throw InvalidArgument("experiment_model: config has no zeta");
  return MixtureModel::random_exchangeable(config.d, config.k, *config.zeta, derive_seed(seed, 1));
}

RunReport run_experiment(const ExperimentConfig& config, unsigned threads) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto count = static_cast<std::size_t>(config.seed_count);
  const unsigned workers = threads == 0 ? default_thread_count() : threads;
  // One seed: give its workers to the inner loops instead.
  const unsigned outer = count > 1 ? workers : 1;
  const unsigned inner = count > 1 ? 1 : workers;

  std::vector<SeedOutput> outputs(count);
  parallel_for(count, outer, [&](std::size_t i) {
    const std::uint64_t seed = config.seed_base + i;
    switch (config.kind) {
      case ExperimentKind::dynamics:
      case ExperimentKind::noise_sweep: outputs[i] = run_dynamics_seed(config, seed); break;
      case ExperimentKind::recovery: outputs[i] = run_recovery_seed(config, seed, inner); break;
      case ExperimentKind::sample_complexity: outputs[i] = run_sample_seed(config, seed, inner); break;
      case ExperimentKind::probe: outputs[i] = run_probe_seed(config, seed, inner); break;
    }
  });

  RunReport report;
  report.config_hash = config.hash();
  report.config = config.to_json();
  report.version = TPI_VERSION;
  report.kind = config.kind;
  report.regime_violation = config.kind != ExperimentKind::probe && config.regime_violation();
  for (auto& o : outputs) {
    report.per_seed.push_back(std::move(o.metrics));
    for (auto& row : o.rows) report.trace_rows.push_back(row);
    if (!o.details.is_null() && !o.details.empty()) {
      report.details[std::to_string(report.per_seed.back().seed)] = std::move(o.details);
    }
  }
  for (const auto& [name, unused] : report.per_seed.front().values) {
    (void)unused;
    std::vector<double> values;
    for (const auto& s : report.per_seed) values.push_back(s.get(name));
    report.aggregates.push_back(aggregate(name, std::move(values)));
  }
  for (const auto& a : report.aggregates)
    if (a.metric == "success") report.success_rate = a.mean;
  for (const auto& t : config.thresholds) {
    ThresholdResult r;
    r.threshold = t;
    const auto it = std::find_if(report.aggregates.begin(), report.aggregates.end(),
                                 [&](const Aggregate& a) { return a.metric == t.metric; });
    if (it == report.aggregates.end()) {
      throw InvalidArgument(fmt::format("threshold names unknown metric '{}'", t.metric));
    }
    r.value = it->stat(t.stat);
    r.pass = (!t.min || r.value >= *t.min) && (!t.max || r.value <= *t.max);
    report.threshold_results.push_back(r);
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ---------------------------------------------------------------------------
// Artifacts

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return fmt::format("{}", value);
}

std::string metrics_csv(const RunReport& report) {
  std::string out = fmt::format("# config_hash={}\nseed", report.config_hash);
  if (!report.per_seed.empty())
    for (const auto& [name, v] : report.per_seed.front().values) out += "," + name;
  out += "\n";
  for (const auto& s : report.per_seed) {
    out += std::to_string(s.seed);
    for (const auto& [name, v] : s.values) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

std::string trace_csv(const RunReport& report) {
  std::string out = fmt::format("# config_hash={}\nseed,noise_level,iteration,correlation,noise_norm\n",
                                report.config_hash);
  for (const auto& r : report.trace_rows) {
    out += fmt::format("{},{},{},{},{}\n", r.seed, r.noise_level ? format_double(*r.noise_level) : "", r.iteration,
                       format_double(r.correlation), r.noise_norm ? format_double(*r.noise_norm) : "");
  }
  return out;
}

std::string aggregates_csv(const std::string& hash, const std::vector<Aggregate>& aggregates) {
  std::string out = fmt::format("# config_hash={}\nmetric,mean,median,q1,q3,iqr,min,max\n", hash);
  for (const auto& a : aggregates) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", a.metric, format_double(a.mean), format_double(a.median),
                       format_double(a.q1), format_double(a.q3), format_double(a.iqr), format_double(a.min),
                       format_double(a.max));
  }
  return out;
}

json to_json(const RunReport& report) {
  json per_seed = json::array();
  for (const auto& s : report.per_seed) {
    json metrics = json::object();
    for (const auto& [name, v] : s.values) metrics[name] = v;
    per_seed.push_back({{"seed", s.seed}, {"metrics", metrics}});
  }
  json aggregates = json::array();
  for (const auto& a : report.aggregates) {
    aggregates.push_back({{"metric", a.metric},
                          {"mean", a.mean},
                          {"median", a.median},
                          {"q1", a.q1},
                          {"q3", a.q3},
                          {"iqr", a.iqr},
                          {"min", a.min},
                          {"max", a.max}});
  }
  json thresholds = json::array();
  for (const auto& t : report.threshold_results) {
    thresholds.push_back({{"metric", t.threshold.metric},
                          {"stat", t.threshold.stat},
                          {"min", opt_json(t.threshold.min)},
                          {"max", opt_json(t.threshold.max)},
                          {"value", t.value},
                          {"pass", t.pass}});
  }
  return {{"config_hash", report.config_hash},
          {"config", report.config},
          {"version", report.version},
          {"kind", to_string(report.kind)},
          {"regime_violation", report.regime_violation},
          {"wall_clock_seconds", report.wall_clock_seconds},
          {"seed_count", report.per_seed.size()},
          {"success_rate", report.success_rate},
          {"per_seed", per_seed},
          {"aggregates", aggregates},
          {"thresholds", thresholds},
          {"details", report.details},
          {"pass", report.pass()}};
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResourceError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw ResourceError(fmt::format("write to '{}' failed", path.string()));
}

std::string read_hash_line(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  std::getline(in, line);
  const std::string prefix = "# config_hash=";
  if (line.rfind(prefix, 0) != 0) throw InvalidArgument(fmt::format("'{}' has no config hash line", path.string()));
  return line.substr(prefix.size());
}

}  // namespace

void write_run(const RunReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ResourceError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  write_text(dir / "report.json", to_json(report).dump(2) + "\n");
  write_text(dir / "metrics.csv", metrics_csv(report));
  if (!report.trace_rows.empty()) {
    write_text(dir / "trace.csv", trace_csv(report));
    std::string jsonl = json{{"config_hash", report.config_hash}}.dump() + "\n";
    for (const auto& r : report.trace_rows) {
      json row = {{"seed", r.seed},
                  {"iteration", r.iteration},
                  {"correlation", r.correlation},
                  {"noise_norm", r.noise_norm ? json(*r.noise_norm) : json()},
                  {"noise_level", r.noise_level ? json(*r.noise_level) : json()}};
      jsonl += row.dump() + "\n";
    }
    write_text(dir / "trace.jsonl", jsonl);
  }
}

json load_run(const std::filesystem::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw InvalidArgument(fmt::format("no report.json in '{}'", dir.string()));
  json report;
  try {
    in >> report;
  } catch (const json::exception& e) {
    throw InvalidArgument(fmt::format("report.json in '{}' is not valid JSON: {}", dir.string(), e.what()));
  }
  const std::string hash = report.at("config_hash").get<std::string>();
  for (const char* name : {"metrics.csv", "trace.csv"}) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) {
      if (std::string(name) == "metrics.csv") throw InvalidArgument("run directory has no metrics.csv");
      continue;
    }
    const std::string other = read_hash_line(path);
    if (other != hash) {
      throw InvalidArgument(fmt::format("{} carries config hash {} but report.json has {}", name, other, hash));
    }
  }
  return report;
}

}  // namespace tpi
