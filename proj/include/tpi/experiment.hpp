#pragma once

// Seeded experiment runner: JSON configs (schema v1), per-seed metrics,
// aggregate statistics and the CSV / JSON-lines artifacts of a run.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpi/decomposer.hpp"
#include "tpi/lvm.hpp"
#include "tpi/power.hpp"

namespace tpi {

enum class ExperimentKind { recovery, dynamics, noise_sweep, sample_complexity, probe };

ExperimentKind parse_experiment_kind(const std::string& text);
std::string to_string(ExperimentKind kind);

enum class ComponentKind { unit_sphere, gaussian, orthonormal };
enum class InitKind { columns_plus_noise, random, samples };

/// Bound on one aggregate statistic of one per-seed metric.
struct Threshold {
  std::string metric;
  /// mean | median | min | max | q1 | q3
  std::string stat = "mean";
  std::optional<double> min;
  std::optional<double> max;
};

struct ProbeSettings {
  /// Any of conditioning, iterative, fresh, mixed.
  std::vector<std::string> checks = {"conditioning", "iterative"};
  Index d = 20;
  Index k = 30;
  int trials = 10000;
  int chain_length = 3;
  Index t = 5;
  /// Entry variance for the single-constraint check; 1/d when absent.
  std::optional<double> sigma2;
};

struct ExperimentConfig {
  int schema_version = 1;
  ExperimentKind kind = ExperimentKind::dynamics;
  std::string name;
  Index d = 0;
  Index k = 0;
  /// Samples per seed (sample-complexity); several values give one metric
  /// group per n.
  std::vector<Index> n_values;
  /// Per-entry noise std of the multiview views; derived from `snr` when
  /// only that is given.
  std::optional<double> zeta;
  std::optional<double> snr;
  ComponentKind components = ComponentKind::unit_sphere;
  std::array<double, 2> weights = {1.0, 1.0};
  /// Target |<x0, a_1>| range for dynamics starts.
  std::array<double, 2> init_correlation = {0.3, 0.4};
  InitKind inits = InitKind::columns_plus_noise;
  double init_noise = 0.0;
  Index init_count = 0;
  /// ||E|| = noise_level * sqrt(k) / d for dynamics; several for a sweep.
  std::vector<double> noise_levels;
  int noise_norm_restarts = 4;
  int noise_norm_iters = 20;
  int seed_count = 1;
  std::uint64_t seed_base = 0;
  PowerConfig power;
  ClusterConfig cluster;
  TensorSource source = TensorSource::exact_tensor;
  Index max_inits = 0;
  /// Correlation counting as success (dynamics) or recovery (matching).
  double success_threshold = 0.95;
  double recovery_threshold = 0.95;
  /// Recovered fraction counting a seed as a success (sample-complexity).
  double success_fraction = 0.9;
  ProbeSettings probe;
  std::vector<Threshold> thresholds;
  std::string output_dir;

  /// Strict schema: unknown fields and wrong types are InvalidArgument.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Every field, defaults included; the basis of the config hash.
  nlohmann::json to_json() const;
  void validate() const;

  /// FNV-1a 64 of the canonical JSON, as 16 hex digits.
  std::string hash() const;
  /// k >= d^1.5.
  bool regime_violation() const;
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> values;

  double get(const std::string& name) const;
};

struct Aggregate {
  std::string metric;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  double min = 0.0;
  double max = 0.0;

  double stat(const std::string& name) const;
};

struct ThresholdResult {
  Threshold threshold;
  double value = 0.0;
  bool pass = true;
};

struct RunReport {
  std::string config_hash;
  nlohmann::json config;
  std::string version;
  ExperimentKind kind = ExperimentKind::dynamics;
  bool regime_violation = false;
  double wall_clock_seconds = 0.0;
  std::vector<SeedMetrics> per_seed;
  std::vector<Aggregate> aggregates;
  /// Mean of the per-seed `success` metric.
  double success_rate = 0.0;
  std::vector<ThresholdResult> threshold_results;
  /// Extra structured output (probe reports), keyed by check name.
  nlohmann::json details = nlohmann::json::object();
  /// Rows (seed, iteration, correlation, noise_norm) for dynamics runs.
  struct TraceRow {
    std::uint64_t seed;
    int iteration;
    double correlation;
    std::optional<double> noise_norm;
    std::optional<double> noise_level;
  };
  std::vector<TraceRow> trace_rows;

  bool pass() const;
};

/// Runs every seed (seed_base, seed_base + 1, ...) on up to `threads`
/// workers; per-seed results depend only on the config and the seed.
RunReport run_experiment(const ExperimentConfig& config, unsigned threads = 1);

/// The ground-truth tensor a recovery or dynamics run builds for `seed`.
FactoredTensor3 experiment_tensor(const ExperimentConfig& config, std::uint64_t seed);
/// The multiview model a sample-complexity run builds for `seed`.  Needs zeta.
MixtureModel experiment_model(const ExperimentConfig& config, std::uint64_t seed);

/// Aggregates of `values` (linear-interpolated quartiles).
Aggregate aggregate(const std::string& metric, std::vector<double> values);

/// Writes report.json, metrics.csv and, for dynamics runs, trace.csv and
/// trace.jsonl into `dir`.  Every file carries the config hash.
void write_run(const RunReport& report, const std::filesystem::path& dir);

/// Per-seed metrics table; first line `# config_hash=<hash>`.
std::string metrics_csv(const RunReport& report);
/// Trace table; first line `# config_hash=<hash>`.
std::string trace_csv(const RunReport& report);
/// Aggregate table (metric,mean,median,q1,q3,iqr,min,max).
std::string aggregates_csv(const std::string& hash, const std::vector<Aggregate>& aggregates);

nlohmann::json to_json(const RunReport& report);

/// Reads report.json from a run directory and checks that metrics.csv (and
/// trace.csv when present) carry the same config hash.  Throws
/// InvalidArgument on a mismatch.
nlohmann::json load_run(const std::filesystem::path& dir);

/// Shortest round-trip decimal form used by every CSV writer.
std::string format_double(double value);

}  // namespace tpi
