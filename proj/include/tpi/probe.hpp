#pragma once

// Empirical instruments for the convergence analysis: induction-hypothesis
// monitors over a recorded power trace, the star norm, and Monte Carlo
// checks of Gaussian conditioning and the auxiliary concentration bounds.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpi/power.hpp"
#include "tpi/rng.hpp"
#include "tpi/tensor.hpp"

namespace tpi {

/// Quantities of the induction hypotheses at iterate x^(t), t = 1, 2, ...
/// (t = 1 is the initialization).
struct HypothesisRecord {
  int t = 1;
  /// ||P_{perp X[t-1]} x(t)||.
  double proj_x_norm = 1.0;
  /// ||P_{perp W[t-2]} w(t-1)||, l2 and l-infinity; absent for t = 1.
  std::optional<double> proj_w_norm;
  std::optional<double> proj_w_inf;
  /// |<a_1, x(t)>|.
  double progress = 0.0;
  /// <a_1, P_{perp X[t-1]} x(t)>.
  double progress_perp = 0.0;
  /// ||u(t)|| = ||P_{perp X[t-1]} B P_{perp W[t-2]} w(t-1)||; absent for t = 1.
  std::optional<double> u_norm;
  /// ||v(t-1)|| = ||P_{perp W[t-2]} B^T P_{perp X[t-2]} x(t-1)||; absent for t = 1.
  std::optional<double> v_norm;
};

/// Envelope constants, each the worst case over the records it covers.
struct HypothesisEnvelope {
  /// min_t proj_x_norm.
  double delta = 1.0;
  /// max proj_w_norm / (sqrt(k)/d) and min of the same ratio.
  double proj_w_upper = 0.0;
  double proj_w_lower = std::numeric_limits<double>::infinity();
  /// max proj_w_inf * d / log(d).
  double proj_w_inf = 0.0;
  /// max ||u|| / (sqrt(k)/d).
  double u_upper = 0.0;
  /// max ||v|| / sqrt(k/d) and min of the same ratio.
  double v_upper = 0.0;
  double v_lower = std::numeric_limits<double>::infinity();
};

struct HypothesisReport {
  Index dim = 0;
  Index rank = 0;
  Index component = 0;
  std::vector<HypothesisRecord> records;
  HypothesisEnvelope envelope;
  /// max_t | ||P_perp x||^2 + ||P x||^2 - 1 |.
  double projection_defect = 0.0;
};

/// Needs a full-level trace (x, y, w stored per step).  `truth` is the
/// d x k factor matrix and `component` the tracked column.  Throws
/// InvalidArgument when the trace lacks the full data or the dimensions
/// disagree.  One record per recorded iterate x(1) ... x(N+1).
HypothesisReport monitor_hypotheses(const IterationTrace& trace, const Matrix& truth,
                                    Index component = 0);

/// Worst case of each envelope constant over several reports.
HypothesisEnvelope merge_envelopes(const std::vector<HypothesisReport>& reports);

/// ||u||_{A*} = max_i |<a_i, u>|.
double star_norm(const Matrix& a, const Vector& u);

/// Gaussian matrix D (i.i.d. N(0, sigma^2)) conditioned on a sequence of
/// linear constraints D v = u (column type) and D^T x = y (row type),
/// maintained in the closed form
///   D | constraints = M + P_{perp C} D~ P_{perp R}
/// with orthonormal bases C (columns) and R (rows) grown one vector per
/// constraint.
class ConditionedGaussian {
 public:
  ConditionedGaussian(Index rows, Index cols, double sigma2);

  /// Adds D v = u.  Throws InvalidArgument when u - M v has a component in
  /// span(C) (the event is impossible) or v lies in span(R).
  void add_column_constraint(const Vector& v, const Vector& u);
  /// Adds D^T x = y, the transpose of a column constraint.
  void add_row_constraint(const Vector& x, const Vector& y);

  const Matrix& mean() const { return mean_; }
  const Matrix& column_basis() const { return col_basis_; }
  const Matrix& row_basis() const { return row_basis_; }
  double sigma2() const { return sigma2_; }

  /// M + P_{perp C} D~ P_{perp R}.
  Matrix sample(CounterRng& rng) const;
  /// P_{perp C} D~ P_{perp R} for a given D~.
  Matrix residual(const Matrix& base) const;

 private:
  static Matrix extend(const Matrix& basis, const Vector& direction);

  Matrix mean_;
  Matrix col_basis_;
  Matrix row_basis_;
  double sigma2_;
};

/// One z-score style comparison declared in a report.
struct StatisticCheck {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = true;
};

struct ConditioningCheck {
  int sample_count = 0;
  Index rows = 0;
  Index cols = 0;
  int chain_length = 1;
  double sigma2 = 0.0;
  /// max_ij |mean_emp - mean_closed| / SE_ij over entries with positive
  /// variance; entries with zero variance are held to 1e-10 absolutely.
  double mean_max_z = 0.0;
  /// Same statistic for the pooled row covariance against sigma^2 P_{perp R}.
  double cov_max_z = 0.0;
  /// Worst ||residual * constraint vector|| and ||C^T residual|| over trials.
  double orthogonality = 0.0;
  /// Worst distance between the generic (pseudo-inverse) conditional sample
  /// and the closed form built from the same base draw.
  double closed_form_gap = 0.0;
  /// mean ||residual||_F^2 / (sigma^2 (rows - dim C)(cols - dim R)).
  double variance_ratio = 1.0;
  double variance_ratio_se = 0.0;
  double z_threshold = 4.0;
  std::vector<StatisticCheck> checks;
  /// Per-trial ||residual||_F^2, capped at 10^4 rows.
  std::vector<double> trial_stats;
  bool pass = true;
};

/// Monte Carlo check of D | {u = D v} = u v^T / ||v||^2 + D~ P_{perp v}.
/// Samples are drawn by the generic Gaussian conditional on vec(D) and
/// compared with the closed-form mean and row covariance at 4 standard
/// errors.  Random u, v are used unless supplied.  Requires trials >= 100.
ConditioningCheck check_conditioning_lemma(Index d, Index k, double sigma2, int trials,
                                           std::uint64_t seed,
                                           const std::optional<Vector>& u = std::nullopt,
                                           const std::optional<Vector>& v = std::nullopt,
                                           unsigned threads = 1);

/// Chain of `chain_length` (1..5) constraints generated from a hidden draw
/// by power-like updates: D v_1 = u_1 with random v_1, then alternately
/// D^T x = y with x = u / ||u||, and D w = u with w = y^{*2}.  Chain length 1
/// is the single-constraint lemma.  sigma^2 = 1/d.
ConditioningCheck check_iterative_conditioning(Index d, Index k, int chain_length, int trials,
                                               std::uint64_t seed, unsigned threads = 1);

enum class FreshVectorKind { zero, dense, spiky };

std::string to_string(FreshVectorKind kind);

struct FreshRandomnessCase {
  FreshVectorKind kind = FreshVectorKind::zero;
  int trials = 0;
  int holds = 0;
  double pass_rate = 0.0;
  /// min ||P_{perp R'} w|| / bound over trials.
  double min_ratio = 0.0;
};

struct FreshRandomnessReport {
  Index k = 0;
  Index t = 0;
  /// E||z||^2 / (40 sqrt(k)).
  double bound = 0.0;
  /// t <= k / (16 ln^2 k); reported, not enforced.
  bool precondition_met = true;
  double required_rate = 0.99;
  std::vector<FreshRandomnessCase> cases;
  std::vector<double> trial_ratios;
  bool pass = true;
};

/// w = (p + z) * (p + z) with z Gaussian (entry variance 1/d) orthogonal to a
/// random t-dimensional R, projected off a random t-dimensional R'.  Checks
/// ||P_{perp R'} w|| >= E||z||^2 / (40 sqrt(k)) for zero, dense and spiky p.
FreshRandomnessReport check_fresh_randomness(Index d, Index k, Index t, int trials,
                                             std::uint64_t seed, unsigned threads = 1);

struct MixedNormReport {
  Index d = 0;
  Index k = 0;
  int trials = 0;
  double max_norm = 0.0;
  double mean_norm = 0.0;
  /// max_norm / sqrt(k/d).
  double fitted_constant = 0.0;
  /// 10 log d.
  double envelope = 0.0;
  std::vector<double> trial_norms;
  bool pass = true;
};

/// ||T'(u, v, I)|| for T' = sum_{j>1} a_j^{(x)3}, Gaussian a_j ~ N(0, I/d),
/// over u with ||u||_{B*} = 1 and unit v drawn from several adversarial
/// families.  Requires k > d.
MixedNormReport check_mixed_norm_bound(Index d, Index k, int trials, std::uint64_t seed,
                                       unsigned threads = 1);

nlohmann::json to_json(const HypothesisReport& report);
nlohmann::json to_json(const HypothesisEnvelope& envelope);
nlohmann::json to_json(const ConditioningCheck& check);
nlohmann::json to_json(const FreshRandomnessReport& report);
nlohmann::json to_json(const MixedNormReport& report);

}  // namespace tpi
