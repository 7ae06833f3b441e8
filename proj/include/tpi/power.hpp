#pragma once

// Symmetric tensor power iteration x <- T(I,x,x)/||T(I,x,x)||, its
// alternating three-mode variant, and a noisy run that tracks how much of
// each iterate is attributable to the perturbation.

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tpi/tensor.hpp"

namespace tpi {

enum class TraceLevel { none, norms, full };

enum class StopReason {
  max_iterations,  // ran all N steps
  target_reached,  // tracked correlation >= 1 - gamma
  fixed_point,     // ||x_{t+1} - s x_t|| < 1e-12 for a sign s
};

std::string to_string(TraceLevel level);
std::string to_string(StopReason reason);
TraceLevel parse_trace_level(const std::string& text);

struct PowerConfig {
  /// N, the iteration cap.
  int max_iters = 20;
  /// Early stop once the tracked correlation reaches 1 - gamma.
  double convergence_gamma = 0.05;
  TraceLevel trace_level = TraceLevel::norms;
  /// Ground-truth column whose correlation is recorded (and used for the
  /// 1 - gamma stop) when a ground truth is supplied.
  std::optional<Index> track_target;

  /// ceil(4 log2 log2 max(d,4)) + 10.
  static int default_iterations(Index d);
  static PowerConfig for_dimension(Index d);

  /// Throws InvalidArgument unless N >= 1 and gamma in (0,1).
  void validate() const;
};

/// One recorded iterate.  Step 0 is the initialization.
struct IterationStep {
  int iteration = 0;
  /// The unit iterate (full level only).
  Vector x;
  /// A^T x (full level, factored runs only).
  Vector y;
  /// y with the tracked entry removed, squared elementwise (full level,
  /// factored runs only).
  Vector w;
  /// ||T(I,x_prev,x_prev)||; absent for step 0.
  std::optional<double> unnormalized_norm;
  /// |<x, a_target>| when a ground truth is supplied.
  std::optional<double> target_correlation;
  /// ||xi_t|| for runs with a noiseless shadow.
  std::optional<double> noise_component_norm;
};

struct IterationTrace {
  std::vector<IterationStep> steps;
  Vector final_x;
  /// Number of power steps applied.
  int iterations = 0;
  StopReason stop_reason = StopReason::max_iterations;
  std::optional<double> final_correlation;
  /// ||T(I,x,x) - ||T(I,x,x)|| x|| / ||T(I,x,x)|| at the final iterate.
  double fixed_point_residual = 0.0;
};

struct PowerStep {
  Vector x;
  double unnormalized_norm;
};

/// One update.  Throws InvalidArgument when |‖x‖ - 1| > 1e-8 and
/// DegenerateIterate when ||T(I,x,x)|| < 1e-300.
PowerStep power_step(const Tensor3& tensor, const Vector& x);

/// Applies power_step up to N times from `x0`.  `ground_truth`, when given,
/// supplies the target column for correlation tracking and the matrix A
/// for the y/w intermediates of a full trace; otherwise a FactoredTensor3
/// input provides A.
IterationTrace run_power(const Tensor3& tensor, const Vector& x0, const PowerConfig& config,
                         const FactoredTensor3* ground_truth = nullptr);

struct AsymmetricTrace {
  std::array<IterationTrace, 3> modes;
};

/// Alternating update over the three modes, all computed from the previous
/// sweep's iterates:
///   x1 <- T(I,x2,x3), x2 <- T(x1,I,x3), x3 <- T(x1,x2,I)  (each normalized).
/// With a ground truth the per-mode correlations are tracked and the run
/// stops when all three reach 1 - gamma.
AsymmetricTrace run_power_asymmetric(const Tensor3& tensor, const Vector& x0, const Vector& y0,
                                     const Vector& z0, const PowerConfig& config,
                                     const FactoredTensor3* ground_truth = nullptr);

/// Power iteration on T^ = T + E with the signal/noise split
/// x^_t = x_t + xi_t of the noisy-update expansion:
///
///   x^_{t+1} = normalize(T(x_t,x_t,I) + 2T(x_t,xi_t,I) + T(xi_t,xi_t,I) + E(x^_t,x^_t,I)),
///   x_{t+1}  = normalize(T(x_t,x_t,I)),
///   xi_{t+1} = x^_{t+1} - x_{t+1},
///
/// starting from x_1 = x^_1 = x0, xi_1 = 0.  The shadow x_t is the noiseless
/// run from the same start; the recorded iterate is the noisy x^_t.
IterationTrace run_power_with_shadow(const PerturbedTensor& perturbed, const Vector& x0,
                                     const PowerConfig& config,
                                     const FactoredTensor3* ground_truth = nullptr);

/// Rescaled correlation r_t = |<x_t, a>| d / sqrt(k) for every recorded step.
std::vector<double> rescaled_correlations(const IterationTrace& trace, Index d, Index k);

/// True when r_{t+1} >= coefficient * r_t^2 for every t with
/// r_t <= saturation * d / sqrt(k).  Needs tracked correlations.
bool quadratic_progress_holds(const IterationTrace& trace, Index d, Index k,
                              double coefficient = 0.4, double saturation = 0.5);

/// Fitted constant C in ||xi_t|| <= C d^{beta 2^{t-1}} eps log(d), maximized
/// over the recorded steps with t = step + 1 (steps with xi = 0 skipped).
double fit_noise_growth_constant(const IterationTrace& trace, Index d, double beta, double eps);

/// One JSON object per step: iteration, correlation, unnorm_norm, noise_norm
/// (null when absent).
void write_trace_jsonl(std::ostream& out, const IterationTrace& trace);
/// Header `iteration,correlation,unnorm_norm,noise_norm`, empty cells when
/// absent.
void write_trace_csv(std::ostream& out, const IterationTrace& trace);

}  // namespace tpi
