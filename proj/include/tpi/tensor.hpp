#pragma once

// Third-order tensors: the implicit CP (factored) form used by every solver
// path, an explicit dense form used as an oracle and for arbitrary
// perturbations, and a signal-plus-noise composite.

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace tpi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Which tensor mode stays open in a two-vector contraction.
///   Mode::first  -> T(I, v, w)
///   Mode::second -> T(v, I, w)
///   Mode::third  -> T(v, w, I)
enum class Mode : int { first = 0, second = 1, third = 2 };

/// Largest dimension for which a d*d*d dense array may be materialized
/// (256^3 doubles = 128 MiB).
inline constexpr Index kMaxDenseDim = 256;

/// Tolerance on the unit-norm invariant of stored components.
inline constexpr double kUnitNormTolerance = 1e-10;

/// Read-only multilinear operator of order three.  Implementations are
/// immutable after construction and safe to share across threads.
class Tensor3 {
 public:
  virtual ~Tensor3() = default;

  virtual Index dim() const = 0;
  /// Two-vector contraction leaving `free` open.  Throws InvalidArgument on
  /// length mismatch.
  virtual Vector contract(Mode free, const Vector& v, const Vector& w) const = 0;
  /// True when the tensor is invariant under index permutation, which makes
  /// the choice of open mode irrelevant.
  virtual bool symmetric() const = 0;
};

/// Rank-k CP tensor  sum_j lambda_j a_j (x) b_j (x) c_j  with unit-norm
/// columns.  The symmetric case stores a single component matrix used for
/// all three modes.
class FactoredTensor3 final : public Tensor3 {
 public:
  /// Symmetric tensor sum_j lambda_j a_j^{(x)3}.  Columns of `components`
  /// must have unit norm and weights must be finite and nonzero.
  FactoredTensor3(Matrix components, Vector weights);
  /// Asymmetric tensor with a separate component matrix per mode.
  FactoredTensor3(Matrix first, Matrix second, Matrix third, Vector weights);

  /// Builds a symmetric tensor from arbitrary nonzero columns by moving
  /// each column norm into its weight: lambda_j ||a_j||^3 u_j^{(x)3}.
  static FactoredTensor3 absorb_norms(const Matrix& raw_components, const Vector& weights);

  Index dim() const override { return modes_[0].rows(); }
  Index rank() const { return weights_.size(); }
  bool symmetric() const override { return symmetric_; }

  const Vector& weights() const { return weights_; }
  const Matrix& components(Mode mode = Mode::first) const {
    return modes_[static_cast<int>(mode)];
  }

  /// max_j |lambda_j| / min_j |lambda_j|.
  double weight_ratio() const;

  /// O(dk): M_free * (lambda .* (M_a^T v) .* (M_b^T w)).
  Vector contract(Mode free, const Vector& v, const Vector& w) const override;

 private:
  void validate() const;

  std::array<Matrix, 3> modes_;
  Vector weights_;
  bool symmetric_;
};

/// Explicit d*d*d array; entry (i,j,l) lives at offset i*d*d + j*d + l.
class DenseTensor3 final : public Tensor3 {
 public:
  /// Zero tensor.  Throws ResourceError when d > kMaxDenseDim.
  explicit DenseTensor3(Index dim, bool symmetric = false);
  /// Takes ownership of `entries` (size d^3).  When `symmetric` is set the
  /// permutation invariant is checked to 1e-9 relative tolerance.
  DenseTensor3(Index dim, std::vector<double> entries, bool symmetric);

  Index dim() const override { return dim_; }
  bool symmetric() const override { return symmetric_; }

  double at(Index i, Index j, Index l) const { return entries_[offset(i, j, l)]; }
  double& at(Index i, Index j, Index l) { return entries_[offset(i, j, l)]; }
  const std::vector<double>& entries() const { return entries_; }

  /// Explicit double sum, O(d^3).
  Vector contract(Mode free, const Vector& v, const Vector& w) const override;

  double frobenius_norm() const;
  /// Largest |entry - permuted entry| relative to max |entry|.
  double symmetry_defect() const;

  DenseTensor3 scaled(double factor) const;
  DenseTensor3& operator+=(const DenseTensor3& other);
  DenseTensor3& operator-=(const DenseTensor3& other);

 private:
  std::size_t offset(Index i, Index j, Index l) const {
    return static_cast<std::size_t>((i * dim_ + j) * dim_ + l);
  }

  Index dim_;
  std::vector<double> entries_;
  bool symmetric_;
};

DenseTensor3 operator-(DenseTensor3 lhs, const DenseTensor3& rhs);

/// Exact tensor plus an arbitrary dense perturbation, T^ = T + E.
class PerturbedTensor final : public Tensor3 {
 public:
  /// `noise_spectral_norm` is the cached estimate of ||E||; see
  /// make_perturbed() to compute it.
  PerturbedTensor(FactoredTensor3 signal, DenseTensor3 noise, double noise_spectral_norm);

  Index dim() const override { return signal_.dim(); }
  bool symmetric() const override { return signal_.symmetric() && noise_.symmetric(); }
  Vector contract(Mode free, const Vector& v, const Vector& w) const override;

  const FactoredTensor3& signal() const { return signal_; }
  const DenseTensor3& noise() const { return noise_; }
  double noise_spectral_norm() const { return noise_spectral_norm_; }

 private:
  FactoredTensor3 signal_;
  DenseTensor3 noise_;
  double noise_spectral_norm_;
};

/// T(I, v, w).
Vector contract_1(const Tensor3& tensor, const Vector& v, const Vector& w);
/// T(u, v, w) = <u, T(I, v, w)>.
double contract_scalar(const Tensor3& tensor, const Vector& u, const Vector& v,
                       const Vector& w);

/// Materializes a factored tensor.  Throws ResourceError beyond kMaxDenseDim.
DenseTensor3 densify(const FactoredTensor3& tensor);

enum class ComponentDistribution { unit_sphere, gaussian };

/// d x k matrix of i.i.d. columns.  `unit_sphere` columns are normalized;
/// `gaussian` returns raw N(0, I/d) draws.  Deterministic in `seed`.
Matrix random_components(Index d, Index k, std::uint64_t seed,
                         ComponentDistribution distribution = ComponentDistribution::unit_sphere);

/// Normalizes every column to unit length.  Throws InvalidArgument on a
/// zero column.
Matrix normalize_columns(Matrix m);

/// Symmetric Gaussian tensor: each index multiset {i,j,l} gets one N(0,1)
/// draw shared by all its permutations.
DenseTensor3 random_symmetric_tensor(Index d, std::uint64_t seed);

struct SpectralNormOptions {
  int restarts = 8;
  int iters = 30;
  std::uint64_t seed = 0;
};

/// Lower bound on the spectral norm max_{|x|=1} |T(x,x,x)| from
/// multi-restart power iteration (alternating over modes for asymmetric
/// tensors).  Restart r always uses random stream r, so the estimate is
/// nondecreasing in `restarts`.
double spectral_norm_estimate(const Tensor3& tensor, const SpectralNormOptions& options = {});

/// Rescales `noise` so its spectral-norm estimate equals `target` under the
/// same `options`.  Throws InvalidArgument for a zero tensor.
DenseTensor3 scale_noise_to(const DenseTensor3& noise, double target,
                            const SpectralNormOptions& options = {});

/// Builds T + E, caching the spectral-norm estimate of E.
PerturbedTensor make_perturbed(FactoredTensor3 signal, DenseTensor3 noise,
                               const SpectralNormOptions& options = {});

}  // namespace tpi
