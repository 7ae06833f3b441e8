#include "tpi/probe.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tpi/errors.hpp"
#include "tpi/parallel.hpp"

namespace tpi {

namespace {

constexpr std::size_t kMaxTrialRows = 10000;
constexpr int kBlockSize = 250;

// Gram-Schmidt (two passes) of `direction` against the orthonormal columns
// of `basis`.  Directions already in the span are skipped.
Matrix append_orthonormal(const Matrix& basis, const Vector& direction) {
  Vector r = direction;
  for (int pass = 0; pass < 2; ++pass) {
    if (basis.cols() > 0) r -= basis * (basis.transpose() * r);
  }
  const double n = r.norm();
  if (n <= 1e-12 * std::max(1.0, direction.norm())) return basis;
  Matrix out(basis.rows(), basis.cols() + 1);
  out.leftCols(basis.cols()) = basis;
  out.col(basis.cols()) = r / n;
  return out;
}

Vector project_out(const Matrix& basis, const Vector& v) {
  if (basis.cols() == 0) return v;
  return v - basis * (basis.transpose() * v);
}

Matrix remove_column(const Matrix& m, Index col) {
  Matrix out(m.rows(), m.cols() - 1);
  out.leftCols(col) = m.leftCols(col);
  out.rightCols(m.cols() - col - 1) = m.rightCols(m.cols() - col - 1);
  return out;
}

Matrix gaussian_matrix(Index rows, Index cols, double sd, CounterRng& rng) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = sd * rng.normal();
  return m;
}

Vector gaussian_vector(Index n, double sd, CounterRng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = sd * rng.normal();
  return v;
}

Matrix random_orthonormal(Index n, Index t, CounterRng& rng) {
  if (t == 0) return Matrix(n, 0);
  const Matrix g = gaussian_matrix(n, t, 1.0, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(n, t);
}

void require_trials(int trials) {
  if (trials < 100) throw InvalidArgument(fmt::format("need at least 100 trials, got {}", trials));
}

}  // namespace

// ---------------------------------------------------------------------------
// Hypothesis monitor

HypothesisReport monitor_hypotheses(const IterationTrace& trace, const Matrix& truth, Index component) {
  const Index d = truth.rows();
  const Index k = truth.cols();
  if (component < 0 || component >= k) throw InvalidArgument("monitor_hypotheses: component out of range");
  if (trace.steps.empty()) throw InvalidArgument("monitor_hypotheses: empty trace");
  for (const auto& step : trace.steps) {
    if (step.x.size() != d || step.y.size() != k || step.w.size() != k - 1) {
      throw InvalidArgument("monitor_hypotheses: trace lacks full x/y/w data for this factor matrix");
    }
  }

  const Matrix b = remove_column(truth, component);
  const Vector a1 = truth.col(component);
  const double sqrt_k = std::sqrt(static_cast<double>(k));
  const double dd = static_cast<double>(d);
  const double log_d = std::log(std::max(dd, 3.0));

  HypothesisReport report;
  report.dim = d;
  report.rank = k;
  report.component = component;
  HypothesisEnvelope& env = report.envelope;

  Matrix x_basis(d, 0);      // X[t-1]
  Matrix w_basis(k - 1, 0);  // W[t-2]
  Vector prev_perp_x;        // P_{perp X[t-2]} x(t-1)

  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const Vector& x = trace.steps[s].x;
    HypothesisRecord rec;
    rec.t = static_cast<int>(s) + 1;
    const Vector perp_x = project_out(x_basis, x);
    const double in_span = x_basis.cols() > 0 ? (x_basis.transpose() * x).squaredNorm() : 0.0;
    rec.proj_x_norm = perp_x.norm();
    report.projection_defect =
        std::max(report.projection_defect, std::abs(perp_x.squaredNorm() + in_span - x.squaredNorm()));
    rec.progress = std::abs(a1.dot(x));
    rec.progress_perp = a1.dot(perp_x);

    if (s >= 1) {
      const Vector& w_prev = trace.steps[s - 1].w;
      const Vector perp_w = project_out(w_basis, w_prev);
      rec.proj_w_norm = perp_w.norm();
      rec.proj_w_inf = perp_w.cwiseAbs().maxCoeff();
      rec.u_norm = project_out(x_basis, b * perp_w).norm();
      rec.v_norm = project_out(w_basis, b.transpose() * prev_perp_x).norm();

      env.proj_w_upper = std::max(env.proj_w_upper, *rec.proj_w_norm * dd / sqrt_k);
      env.proj_w_lower = std::min(env.proj_w_lower, *rec.proj_w_norm * dd / sqrt_k);
      env.proj_w_inf = std::max(env.proj_w_inf, *rec.proj_w_inf * dd / log_d);
      env.u_upper = std::max(env.u_upper, *rec.u_norm * dd / sqrt_k);
      env.v_upper = std::max(env.v_upper, *rec.v_norm / std::sqrt(static_cast<double>(k) / dd));
      env.v_lower = std::min(env.v_lower, *rec.v_norm / std::sqrt(static_cast<double>(k) / dd));
      w_basis = append_orthonormal(w_basis, w_prev);
    }
    env.delta = std::min(env.delta, rec.proj_x_norm);
    prev_perp_x = perp_x;
    x_basis = append_orthonormal(x_basis, x);
    report.records.push_back(rec);
  }
  return report;
}

HypothesisEnvelope merge_envelopes(const std::vector<HypothesisReport>& reports) {
  HypothesisEnvelope out;
  for (const auto& r : reports) {
    const auto& e = r.envelope;
    out.delta = std::min(out.delta, e.delta);
    out.proj_w_upper = std::max(out.proj_w_upper, e.proj_w_upper);
    out.proj_w_lower = std::min(out.proj_w_lower, e.proj_w_lower);
    out.proj_w_inf = std::max(out.proj_w_inf, e.proj_w_inf);
    out.u_upper = std::max(out.u_upper, e.u_upper);
    out.v_upper = std::max(out.v_upper, e.v_upper);
    out.v_lower = std::min(out.v_lower, e.v_lower);
  }
  return out;
}

double star_norm(const Matrix& a, const Vector& u) {
  if (a.rows() != u.size()) {
    throw InvalidArgument(fmt::format("star_norm: matrix has {} rows, vector has {}", a.rows(), u.size()));
  }
  if (a.cols() == 0) return 0.0;
  return (a.transpose() * u).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Conditioned Gaussian matrices

ConditionedGaussian::ConditionedGaussian(Index rows, Index cols, double sigma2)
    : mean_(Matrix::Zero(rows, cols)), col_basis_(rows, 0), row_basis_(cols, 0), sigma2_(sigma2) {
  if (rows < 1 || cols < 1) throw InvalidArgument("ConditionedGaussian: empty shape");
  if (!(sigma2 > 0.0)) throw InvalidArgument("ConditionedGaussian: sigma^2 must be positive");
}

Matrix ConditionedGaussian::extend(const Matrix& basis, const Vector& direction) {
  return append_orthonormal(basis, direction);
}

void ConditionedGaussian::add_column_constraint(const Vector& v, const Vector& u) {
  if (v.size() != mean_.cols() || u.size() != mean_.rows()) {
    throw InvalidArgument("add_column_constraint: dimension mismatch");
  }
  const Vector target = u - mean_ * v;
  const double scale = std::max(1.0, u.norm());
  if (col_basis_.cols() > 0 && (col_basis_.transpose() * target).norm() > 1e-8 * scale) {
    throw InvalidArgument("add_column_constraint: u - Mv is not orthogonal to the column span; event is impossible");
  }
  const Vector p = project_out(row_basis_, v);
  const double pn2 = p.squaredNorm();
  if (pn2 <= 1e-24 * std::max(1.0, v.squaredNorm())) {
    throw InvalidArgument("add_column_constraint: v lies in the constrained row span");
  }
  mean_ += project_out(col_basis_, target) * p.transpose() / pn2;
  row_basis_ = extend(row_basis_, v);
}

void ConditionedGaussian::add_row_constraint(const Vector& x, const Vector& y) {
  if (x.size() != mean_.rows() || y.size() != mean_.cols()) {
    throw InvalidArgument("add_row_constraint: dimension mismatch");
  }
  const Vector target = y - mean_.transpose() * x;
  const double scale = std::max(1.0, y.norm());
  if (row_basis_.cols() > 0 && (row_basis_.transpose() * target).norm() > 1e-8 * scale) {
    throw InvalidArgument("add_row_constraint: y - M^T x is not orthogonal to the row span; event is impossible");
  }
  const Vector p = project_out(col_basis_, x);
  const double pn2 = p.squaredNorm();
  if (pn2 <= 1e-24 * std::max(1.0, x.squaredNorm())) {
    throw InvalidArgument("add_row_constraint: x lies in the constrained column span");
  }
  mean_ += p * project_out(row_basis_, target).transpose() / pn2;
  col_basis_ = extend(col_basis_, x);
}

Matrix ConditionedGaussian::residual(const Matrix& base) const {
  Matrix r = base;
  if (col_basis_.cols() > 0) r -= col_basis_ * (col_basis_.transpose() * r);
  if (row_basis_.cols() > 0) r -= (r * row_basis_) * row_basis_.transpose();
  return r;
}

Matrix ConditionedGaussian::sample(CounterRng& rng) const {
  return mean_ + residual(gaussian_matrix(mean_.rows(), mean_.cols(), std::sqrt(sigma2_), rng));
}

namespace {

struct LinearConstraint {
  bool column = true;  // D v = u when true, D^T v = u otherwise
  Vector v;
  Vector u;
};

// Generic conditional of vec(D) ~ N(0, sigma^2 I) on C vec(D) = c: the
// orthogonal projection of a free draw onto the affine constraint set,
//   vec(D) + C^T (C C^T)^+ (c - C vec(D)).
class GenericConditioner {
 public:
  GenericConditioner(Index rows, Index cols, const std::vector<LinearConstraint>& constraints)
      : rows_(rows), cols_(cols) {
    Index m = 0;
    for (const auto& c : constraints) m += c.column ? rows : cols;
    op_ = Matrix::Zero(m, rows * cols);
    target_.resize(m);
    Index r = 0;
    for (const auto& c : constraints) {
      if (c.column) {
        for (Index i = 0; i < rows; ++i, ++r) {
          for (Index j = 0; j < cols; ++j) op_(r, i + j * rows) = c.v(j);
          target_(r) = c.u(i);
        }
      } else {
        for (Index j = 0; j < cols; ++j, ++r) {
          for (Index i = 0; i < rows; ++i) op_(r, i + j * rows) = c.v(i);
          target_(r) = c.u(j);
        }
      }
    }
    const Matrix gram = op_ * op_.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    const Vector& ev = eig.eigenvalues();
    const double cutoff = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    Vector inv = Vector::Zero(ev.size());
    for (Index i = 0; i < ev.size(); ++i)
      if (ev(i) > cutoff) inv(i) = 1.0 / ev(i);
    gain_ = op_.transpose() * (eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose());
  }

  Matrix condition(const Matrix& base) const {
    Eigen::Map<const Vector> flat(base.data(), base.size());
    const Vector out = flat + gain_ * (target_ - op_ * flat);
    return Eigen::Map<const Matrix>(out.data(), rows_, cols_);
  }

 private:
  Index rows_;
  Index cols_;
  Matrix op_;
  Vector target_;
  Matrix gain_;
};

struct BlockSums {
  Matrix mean_sum;
  Matrix cov_sum;
  double residual_sq = 0.0;
  double orthogonality = 0.0;
  double gap = 0.0;
  std::vector<double> trial_stats;
};

ConditioningCheck run_conditioning(const ConditionedGaussian& closed,
                                   const std::vector<LinearConstraint>& constraints, int trials,
                                   std::uint64_t seed, unsigned threads, int chain_length) {
  require_trials(trials);
  const Index d = closed.mean().rows();
  const Index k = closed.mean().cols();
  const double sigma = std::sqrt(closed.sigma2());
  const GenericConditioner generic(d, k, constraints);

  const int blocks = (trials + kBlockSize - 1) / kBlockSize;
  std::vector<BlockSums> sums(static_cast<std::size_t>(blocks));
  parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
    BlockSums& acc = sums[b];
    acc.mean_sum = Matrix::Zero(d, k);
    acc.cov_sum = Matrix::Zero(k, k);
    const int begin = static_cast<int>(b) * kBlockSize;
    const int end = std::min(trials, begin + kBlockSize);
    for (int trial = begin; trial < end; ++trial) {
      CounterRng rng(seed, static_cast<std::uint64_t>(trial));
      const Matrix base = gaussian_matrix(d, k, sigma, rng);
      const Matrix sample = generic.condition(base);
      const Matrix resid = sample - closed.mean();
      const Matrix closed_sample = closed.mean() + closed.residual(base);
      acc.gap = std::max(acc.gap, (sample - closed_sample).cwiseAbs().maxCoeff());
      double orth = 0.0;
      if (closed.row_basis().cols() > 0) orth = std::max(orth, (resid * closed.row_basis()).norm());
      if (closed.column_basis().cols() > 0)
        orth = std::max(orth, (closed.column_basis().transpose() * resid).norm());
      for (const auto& c : constraints) {
        const Vector lhs = c.column ? Vector(sample * c.v) : Vector(sample.transpose() * c.v);
        orth = std::max(orth, (lhs - c.u).norm());
      }
      acc.orthogonality = std::max(acc.orthogonality, orth);
      acc.mean_sum += sample;
      acc.cov_sum.noalias() += resid.transpose() * resid;
      const double rsq = resid.squaredNorm();
      acc.residual_sq += rsq;
      acc.trial_stats.push_back(rsq);
    }
  });

  ConditioningCheck out;
  out.sample_count = trials;
  out.rows = d;
  out.cols = k;
  out.chain_length = chain_length;
  out.sigma2 = closed.sigma2();
  Matrix mean_sum = Matrix::Zero(d, k);
  Matrix cov_sum = Matrix::Zero(k, k);
  double residual_sq = 0.0;
  for (const auto& acc : sums) {
    mean_sum += acc.mean_sum;
    cov_sum += acc.cov_sum;
    residual_sq += acc.residual_sq;
    out.orthogonality = std::max(out.orthogonality, acc.orthogonality);
    out.closed_form_gap = std::max(out.closed_form_gap, acc.gap);
    for (double s : acc.trial_stats) {
      if (out.trial_stats.size() < kMaxTrialRows) out.trial_stats.push_back(s);
    }
  }

  const double n = static_cast<double>(trials);
  const double s2 = closed.sigma2();
  const Index dim_c = closed.column_basis().cols();
  const Index dim_r = closed.row_basis().cols();
  const Matrix pc = Matrix::Identity(d, d) - closed.column_basis() * closed.column_basis().transpose();
  const Matrix pr = Matrix::Identity(k, k) - closed.row_basis() * closed.row_basis().transpose();
  constexpr double kExact = 1e-10;
  bool exact_ok = true;

  const Matrix emp_mean = mean_sum / n;
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < d; ++i) {
      const double var = s2 * pc(i, i) * pr(j, j);
      const double dev = std::abs(emp_mean(i, j) - closed.mean()(i, j));
      if (var <= 1e-14 * s2) {
        exact_ok = exact_ok && dev <= kExact;
      } else {
        out.mean_max_z = std::max(out.mean_max_z, dev / std::sqrt(var / n));
      }
    }
  }

  // Rows of the residual share covariance sigma^2 P_{perp R}; pool them.
  const double rows_eff = static_cast<double>(d - dim_c);
  const Matrix emp_cov = cov_sum / (n * rows_eff);
  for (Index j = 0; j < k; ++j) {
    for (Index l = j; l < k; ++l) {
      const double target = s2 * pr(j, l);
      const double var = s2 * s2 * (pr(j, j) * pr(l, l) + pr(j, l) * pr(j, l));
      const double dev = std::abs(emp_cov(j, l) - target);
      if (var <= 1e-14 * s2 * s2) {
        exact_ok = exact_ok && dev <= kExact;
      } else {
        out.cov_max_z = std::max(out.cov_max_z, dev / std::sqrt(var / (n * rows_eff)));
      }
    }
  }

  const double free_dims = static_cast<double>((d - dim_c) * (k - dim_r));
  out.variance_ratio = residual_sq / n / (s2 * free_dims);
  out.variance_ratio_se = std::sqrt(2.0 / (free_dims * n));

  out.checks = {
      {"mean_max_z", out.mean_max_z, out.z_threshold, out.mean_max_z <= out.z_threshold},
      {"cov_max_z", out.cov_max_z, out.z_threshold, out.cov_max_z <= out.z_threshold},
      {"zero_variance_entries", exact_ok ? 0.0 : 1.0, 0.0, exact_ok},
      {"orthogonality", out.orthogonality, kExact, out.orthogonality <= kExact},
      {"closed_form_gap", out.closed_form_gap, kExact, out.closed_form_gap <= kExact},
      {"variance_ratio_z", std::abs(out.variance_ratio - 1.0) / out.variance_ratio_se, out.z_threshold,
       std::abs(out.variance_ratio - 1.0) <= out.z_threshold * out.variance_ratio_se},
      {"variance_ratio_band", out.variance_ratio, 0.1,
       out.variance_ratio >= 0.9 && out.variance_ratio <= 1.1},
  };
  out.pass = std::all_of(out.checks.begin(), out.checks.end(), [](const auto& c) { return c.pass; });
  return out;
}

}  // namespace

ConditioningCheck check_conditioning_lemma(Index d, Index k, double sigma2, int trials, std::uint64_t seed,
                                           const std::optional<Vector>& u, const std::optional<Vector>& v,
                                           unsigned threads) {
  require_trials(trials);
  if (d < 1 || k < 1) throw InvalidArgument("check_conditioning_lemma: empty shape");
  if (!(sigma2 > 0.0)) throw InvalidArgument("check_conditioning_lemma: sigma^2 must be positive");
  CounterRng setup(derive_seed(seed, 0xC0DE), 0);
  const Vector vv = v ? *v : gaussian_vector(k, 1.0, setup);
  const Vector uu = u ? *u : gaussian_vector(d, std::sqrt(sigma2) * vv.norm(), setup);
  if (vv.size() != k || uu.size() != d) throw InvalidArgument("check_conditioning_lemma: u/v dimension mismatch");
  ConditionedGaussian closed(d, k, sigma2);
  closed.add_column_constraint(vv, uu);
  return run_conditioning(closed, {{true, vv, uu}}, trials, derive_seed(seed, 0x5A3B), threads, 1);
}

ConditioningCheck check_iterative_conditioning(Index d, Index k, int chain_length, int trials,
                                               std::uint64_t seed, unsigned threads) {
  require_trials(trials);
  if (chain_length < 1 || chain_length > 5) {
    throw InvalidArgument(fmt::format("chain length must be in [1,5], got {}", chain_length));
  }
  if (d <= chain_length || k <= chain_length) throw InvalidArgument("check_iterative_conditioning: shape too small");
  const double sigma2 = 1.0 / static_cast<double>(d);
  CounterRng setup(derive_seed(seed, 0xC4A1), 0);
  const Matrix hidden = gaussian_matrix(d, k, std::sqrt(sigma2), setup);

  std::vector<LinearConstraint> chain;
  Vector v = gaussian_vector(k, 1.0, setup);
  Vector u = hidden * v;
  chain.push_back({true, v, u});
  while (static_cast<int>(chain.size()) < chain_length) {
    if (chain.back().column) {
      const Vector x = u / u.norm();
      const Vector y = hidden.transpose() * x;
      chain.push_back({false, x, y});
      v = y.cwiseProduct(y);
    } else {
      u = hidden * v;
      chain.push_back({true, v, u});
    }
  }

  ConditionedGaussian closed(d, k, sigma2);
  for (const auto& c : chain) {
    if (c.column) {
      closed.add_column_constraint(c.v, c.u);
    } else {
      closed.add_row_constraint(c.v, c.u);
    }
  }
  return run_conditioning(closed, chain, trials, derive_seed(seed, 0x5A3C), threads, chain_length);
}

// ---------------------------------------------------------------------------
// Fresh randomness

std::string to_string(FreshVectorKind kind) {
  switch (kind) {
    case FreshVectorKind::zero: return "zero";
    case FreshVectorKind::dense: return "dense";
    case FreshVectorKind::spiky: return "spiky";
  }
  return "unknown";
}

FreshRandomnessReport check_fresh_randomness(Index d, Index k, Index t, int trials, std::uint64_t seed,
                                             unsigned threads) {
  if (d < 1 || k < 2) throw InvalidArgument("check_fresh_randomness: need d >= 1 and k >= 2");
  if (t < 0 || t >= k) throw InvalidArgument("check_fresh_randomness: need 0 <= t < k");
  if (trials < 1) throw InvalidArgument("check_fresh_randomness: need trials >= 1");

  FreshRandomnessReport report;
  report.k = k;
  report.t = t;
  const double kd = static_cast<double>(k);
  const double log_k = std::log(kd);
  report.precondition_met = static_cast<double>(t) <= kd / (16.0 * log_k * log_k);
  const double sigma2 = 1.0 / static_cast<double>(d);
  const double expected_z2 = static_cast<double>(k - t) * sigma2;
  report.bound = expected_z2 / (40.0 * std::sqrt(kd));

  const std::array<FreshVectorKind, 3> kinds = {FreshVectorKind::zero, FreshVectorKind::dense,
                                                FreshVectorKind::spiky};
  for (std::size_t c = 0; c < kinds.size(); ++c) {
    std::vector<double> ratios(static_cast<std::size_t>(trials));
    const std::uint64_t case_seed = derive_seed(seed, c);
    parallel_for(ratios.size(), threads, [&](std::size_t i) {
      CounterRng rng(case_seed, i);
      const Matrix r = random_orthonormal(k, t, rng);
      const Matrix r_prime = random_orthonormal(k, t, rng);
      const Vector z = project_out(r, gaussian_vector(k, std::sqrt(sigma2), rng));
      Vector p = Vector::Zero(k);
      if (kinds[c] == FreshVectorKind::dense) {
        p = gaussian_vector(k, std::sqrt(sigma2), rng);
      } else if (kinds[c] == FreshVectorKind::spiky) {
        p(static_cast<Index>(rng.below(static_cast<std::uint64_t>(k)))) = 10.0 * std::sqrt(expected_z2);
      }
      const Vector s = p + z;
      const Vector w = s.cwiseProduct(s);
      ratios[i] = project_out(r_prime, w).norm() / report.bound;
    });
    FreshRandomnessCase fc;
    fc.kind = kinds[c];
    fc.trials = trials;
    fc.holds = static_cast<int>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r >= 1.0; }));
    fc.pass_rate = static_cast<double>(fc.holds) / trials;
    fc.min_ratio = *std::min_element(ratios.begin(), ratios.end());
    report.cases.push_back(fc);
    report.pass = report.pass && fc.pass_rate >= report.required_rate;
    for (double r : ratios) {
      if (report.trial_ratios.size() < kMaxTrialRows) report.trial_ratios.push_back(r);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Mixed-norm bound

MixedNormReport check_mixed_norm_bound(Index d, Index k, int trials, std::uint64_t seed, unsigned threads) {
  if (k <= d) throw InvalidArgument(fmt::format("check_mixed_norm_bound needs k > d, got d={} k={}", d, k));
  if (d < 2) throw InvalidArgument("check_mixed_norm_bound: need d >= 2");
  if (trials < 1) throw InvalidArgument("check_mixed_norm_bound: need trials >= 1");

  std::vector<double> norms(static_cast<std::size_t>(trials));
  parallel_for(norms.size(), threads, [&](std::size_t i) {
    const std::uint64_t trial_seed = derive_seed(seed, i);
    const Matrix a = random_components(d, k, trial_seed, ComponentDistribution::gaussian);
    const Matrix b = a.rightCols(k - 1);
    CounterRng rng(derive_seed(trial_seed, 0xB0B), 0);
    // u families: Gaussian, a single component, a signed sum of components.
    Vector u;
    switch (i % 3) {
      case 0: u = gaussian_vector(d, 1.0, rng); break;
      case 1: u = b.col(static_cast<Index>(rng.below(static_cast<std::uint64_t>(k - 1)))); break;
      default: {
        Vector signs(k - 1);
        for (Index j = 0; j < k - 1; ++j) signs(j) = (rng() & 1U) ? 1.0 : -1.0;
        u = b * signs;
      }
    }
    u /= star_norm(b, u);
    // v families: unit Gaussian, or aligned with u.
    Vector v = ((i / 3) % 2 == 0) ? gaussian_vector(d, 1.0, rng) : u;
    v.normalize();
    const Vector coeff = (b.transpose() * u).cwiseProduct(b.transpose() * v);
    norms[i] = (b * coeff).norm();
  });

  MixedNormReport report;
  report.d = d;
  report.k = k;
  report.trials = trials;
  report.max_norm = *std::max_element(norms.begin(), norms.end());
  double total = 0.0;
  for (double n : norms) total += n;
  report.mean_norm = total / trials;
  report.fitted_constant = report.max_norm / std::sqrt(static_cast<double>(k) / static_cast<double>(d));
  report.envelope = 10.0 * std::log(static_cast<double>(d));
  report.pass = report.fitted_constant <= report.envelope;
  norms.resize(std::min(norms.size(), kMaxTrialRows));
  report.trial_norms = std::move(norms);
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

nlohmann::json to_json(const HypothesisEnvelope& e) {
  return {{"delta", e.delta},
          {"proj_w_upper", e.proj_w_upper},
          {"proj_w_lower", finite_or_null(e.proj_w_lower)},
          {"proj_w_inf", e.proj_w_inf},
          {"u_upper", e.u_upper},
          {"v_upper", e.v_upper},
          {"v_lower", finite_or_null(e.v_lower)}};
}

nlohmann::json to_json(const HypothesisReport& report) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : report.records) {
    if (records.size() >= kMaxTrialRows) break;
    records.push_back({{"t", r.t},
                       {"proj_x_norm", r.proj_x_norm},
                       {"proj_w_norm", opt(r.proj_w_norm)},
                       {"proj_w_inf", opt(r.proj_w_inf)},
                       {"progress", r.progress},
                       {"progress_perp", r.progress_perp},
                       {"u_norm", opt(r.u_norm)},
                       {"v_norm", opt(r.v_norm)}});
  }
  return {{"d", report.dim},
          {"k", report.rank},
          {"component", report.component},
          {"projection_defect", report.projection_defect},
          {"envelope", to_json(report.envelope)},
          {"records", records}};
}

nlohmann::json to_json(const ConditioningCheck& check) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : check.checks) {
    checks.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}});
  }
  return {{"sample_count", check.sample_count},
          {"d", check.rows},
          {"k", check.cols},
          {"chain_length", check.chain_length},
          {"sigma2", check.sigma2},
          {"mean_max_z", check.mean_max_z},
          {"cov_max_z", check.cov_max_z},
          {"orthogonality", check.orthogonality},
          {"closed_form_gap", check.closed_form_gap},
          {"variance_ratio", check.variance_ratio},
          {"variance_ratio_se", check.variance_ratio_se},
          {"z_threshold", check.z_threshold},
          {"checks", checks},
          {"trial_residual_sq", check.trial_stats},
          {"pass", check.pass}};
}

nlohmann::json to_json(const FreshRandomnessReport& report) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : report.cases) {
    cases.push_back({{"kind", to_string(c.kind)},
                     {"trials", c.trials},
                     {"holds", c.holds},
                     {"pass_rate", c.pass_rate},
                     {"min_ratio", c.min_ratio}});
  }
  return {{"k", report.k},
          {"t", report.t},
          {"bound", report.bound},
          {"precondition_met", report.precondition_met},
          {"required_rate", report.required_rate},
          {"cases", cases},
          {"trial_ratios", report.trial_ratios},
          {"pass", report.pass}};
}

nlohmann::json to_json(const MixedNormReport& report) {
  return {{"d", report.d},
          {"k", report.k},
          {"trials", report.trials},
          {"max_norm", report.max_norm},
          {"mean_norm", report.mean_norm},
          {"fitted_constant", report.fitted_constant},
          {"envelope", report.envelope},
          {"trial_norms", report.trial_norms},
          {"pass", report.pass}};
}

}  // namespace tpi
