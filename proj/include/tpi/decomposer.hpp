#pragma once

// Sample-initialized multi-start power iteration followed by greedy
// clustering of the converged iterates, plus recovery scoring against a
// known factor matrix.

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpi/lvm.hpp"
#include "tpi/power.hpp"
#include "tpi/tensor.hpp"

namespace tpi {

struct ClusterConfig {
  /// Survivors with |<x, x^>| > nu/2 are absorbed by an emitted estimate.
  double nu = 0.5;
  /// Extra power steps on each selected survivor; 0 means reuse the power
  /// config's N.
  int refine_iters = 0;
  /// Cap on the number of emitted estimates (0 = no cap).
  Index max_components = 0;

  void validate() const;
};

struct EstimateDiagnostics {
  /// |T(x^,x^,x^)| after refinement.
  double final_score = 0.0;
  /// Power steps from the init plus refinement steps.
  int iterations = 0;
  /// |T(x,x,x)| before each refinement step and after the last one.
  std::vector<double> refine_scores;
  /// Final score >= initial score - 1e-9.
  bool monotone = true;
  double fixed_point_residual = 0.0;
  /// Index into the init list of the survivor that was refined.
  Index source_init = 0;
};

struct DecompositionResult {
  /// d x m unit columns, sign-normalized so T(x^,x^,x^) >= 0.
  Matrix estimates;
  /// lambda^_i = T(x^_i, x^_i, x^_i).
  Vector weights;
  std::vector<Index> cluster_sizes;
  std::vector<EstimateDiagnostics> diagnostics;
  /// Refined estimates dropped because they landed within nu/2 of an
  /// earlier emission.
  Index duplicates_dropped = 0;
  /// Inits whose iteration hit a vanishing contraction.
  Index degenerate_starts = 0;

  Index size() const { return estimates.cols(); }
};

/// Runs the power method from every column of `inits` (unit vectors), then
/// repeatedly refines the survivor with the largest |T(x,x,x)| (lowest index
/// on ties), emits it, and discards every survivor within nu/2 of it.
/// Throws InvalidArgument for an empty init set.
DecompositionResult decompose(const Tensor3& tensor, const Matrix& inits, const PowerConfig& power,
                              const ClusterConfig& cluster, unsigned threads = 1);

/// T(x,x,x).
double estimate_weight(const Tensor3& tensor, const Vector& x);

/// Least-squares weights minimizing ||T - sum_i w_i x_i^(x)3||_F, from the
/// normal equations G w = b with G_ij = <x_i,x_j>^3 and b_i = T(x_i,x_i,x_i).
Vector refit_weights(const Tensor3& tensor, const Matrix& estimates);

struct MatchReport {
  /// sqrt(sum over matched pairs of ||s_i x^_i - a_pi(i)||^2).
  double frobenius_error = 0.0;
  /// |<x^_i, a_pi(i)>| for every matched estimate, in estimate order.
  std::vector<double> per_component_correlations;
  /// Truth column per estimate, absent when the estimate is unmatched.
  std::vector<std::optional<Index>> permutation;
  /// Sign s_i in {-1, +1} applied to each estimate.
  std::vector<int> signs;
  /// Truth columns with no matched estimate.
  std::vector<Index> missed;
  bool optimal = true;

  Index matched() const;
  /// Number of truth columns matched with correlation >= threshold.
  Index recovered(double threshold) const;
};

/// Assignment maximizing sum |<x^_i, a_pi(i)>|: Hungarian algorithm when
/// max(m, k) <= optimal_limit, greedy otherwise.
MatchReport match_and_score(const Matrix& estimates, const Matrix& truth,
                            Index optimal_limit = 2000);
/// Greedy assignment: repeatedly pair the highest remaining |correlation|.
MatchReport match_greedy(const Matrix& estimates, const Matrix& truth);

enum class TensorSource { exact_tensor, empirical_tensor, implicit_samples };

TensorSource parse_tensor_source(const std::string& text);
std::string to_string(TensorSource source);

struct LearnConfig {
  PowerConfig power;
  ClusterConfig cluster;
  /// Use the first `max_inits` samples of view 1 as starts (0 = all).
  Index max_inits = 0;
  unsigned threads = 1;
};

/// Builds the requested tensor (the model's population tensor, the dense
/// empirical moment, or the implicit sample-sum operator), starts from the
/// normalized view-1 samples, and decomposes.  `model` is required for the
/// exact-tensor source.
DecompositionResult learn_multiview(const SampleBatch& batch, TensorSource source,
                                    const LearnConfig& config,
                                    const MixtureModel* model = nullptr);

/// Normalized columns of view 1 (zero samples skipped), first `max_inits`.
Matrix sample_inits(const SampleBatch& batch, Index max_inits = 0);

nlohmann::json to_json(const DecompositionResult& result);
nlohmann::json to_json(const MatchReport& report);

}  // namespace tpi
