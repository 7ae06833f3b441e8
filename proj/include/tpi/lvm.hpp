#pragma once

// Multiview mixtures z_l = A h + eta_l and spherical Gaussian mixtures:
// samplers, third-order moment estimators and SNR bookkeeping.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpi/rng.hpp"
#include "tpi/tensor.hpp"

namespace tpi {

enum class NoiseKind { spherical_gaussian, custom };

/// Draws one d-dimensional noise vector for the custom noise kind.
using NoiseSampler = std::function<Vector(CounterRng&, Index)>;

struct MixtureModel {
  /// One d x k matrix for the exchangeable model, or three (A, B, C) for
  /// distinct per-view factors.  View l uses factors[l % factors.size()].
  std::vector<Matrix> factors;
  /// lambda_j, a point of the open simplex.
  Vector priors;
  NoiseKind noise_kind = NoiseKind::spherical_gaussian;
  /// zeta, per-entry standard deviation of spherical noise.
  double noise_scale = 0.0;
  int views = 3;
  NoiseSampler custom_noise;

  Index dim() const { return factors.front().rows(); }
  Index rank() const { return factors.front().cols(); }
  const Matrix& factor(int view) const {
    return factors[static_cast<std::size_t>(view) % factors.size()];
  }

  /// Uniform priors, unit-sphere components.
  static MixtureModel random_exchangeable(Index d, Index k, double zeta, std::uint64_t seed);

  /// Population third moment sum_j lambda_j a_j (x) b_j (x) c_j.
  FactoredTensor3 population_tensor() const;

  /// max_j lambda_j / min_j lambda_j.
  double prior_ratio() const;

  /// Throws InvalidArgument on a broken invariant.
  void validate() const;
};

struct SampleBatch {
  /// p matrices of size d x n; column tau of view l is z_l^(tau).
  std::vector<Matrix> views;
  /// Hidden state per sample.  Evaluation-only: decomposition code never
  /// reads it.
  std::optional<std::vector<Index>> labels;

  Index dim() const { return views.empty() ? 0 : views.front().rows(); }
  Index size() const { return views.empty() ? 0 : views.front().cols(); }
  void validate() const;
};

/// Deterministic in (model, n, seed): sample tau draws from stream tau.
SampleBatch sample_multiview(const MixtureModel& model, Index n, std::uint64_t seed);

/// T^ = (1/n) sum_tau z_1 (x) z_2 (x) z_3.  Throws ResourceError beyond the
/// dense budget.
DenseTensor3 empirical_third_moment(const SampleBatch& batch);

/// The empirical third moment as an operator that never materializes d^3
/// entries: T^(I,v,w) = (1/n) Z_1 ((Z_2^T v) .* (Z_3^T w)), O(dn) per call.
class SampleMomentTensor final : public Tensor3 {
 public:
  explicit SampleMomentTensor(const SampleBatch& batch);

  Index dim() const override { return views_[0].rows(); }
  bool symmetric() const override { return false; }
  Vector contract(Mode free, const Vector& v, const Vector& w) const override;

 private:
  std::array<Matrix, 3> views_;
};

struct SphericalGmm {
  Matrix means;
  Vector priors;
  /// Known per-coordinate standard deviation.
  double sigma = 0.0;

  Index dim() const { return means.rows(); }
  Index rank() const { return means.cols(); }
  void validate() const;
};

struct GmmSample {
  Matrix points;  // d x n
  std::vector<Index> labels;
};

GmmSample sample_gmm(const SphericalGmm& gmm, Index n, std::uint64_t seed);

/// Empirical plug-in of
///   M3 = E[z(x)z(x)z] - sigma^2 sum_i (m(x)e_i(x)e_i + e_i(x)m(x)e_i + e_i(x)e_i(x)m),
/// with m the sample mean.
DenseTensor3 gmm_modified_moment(const SphericalGmm& gmm, const Matrix& points);

/// Population E[z(x)z(x)z] for the mixture, from the Gaussian moment
/// expansion of each component.
DenseTensor3 gmm_population_raw_moment(const SphericalGmm& gmm);

/// Applies the sigma^2 correction to a raw third moment with mean `mean`.
DenseTensor3 gmm_correct_moment(DenseTensor3 raw, const Vector& mean, double sigma);

struct SnrReport {
  /// 1 / mean_tau ||z_1 - a_h||; +infinity when the noise is identically zero.
  double empirical_snr = 0.0;
  double mean_noise_norm = 0.0;
  /// zeta sqrt(d) for spherical noise.
  double theoretical_noise_norm = 0.0;
  /// 1 / (zeta sqrt(d)); +infinity for zeta = 0.
  double theoretical_snr = 0.0;
};

/// Needs labels; throws InvalidArgument without them.
SnrReport snr(const SampleBatch& batch, const MixtureModel& model);

/// zeta giving SNR = 1/(zeta sqrt(d)) equal to `target_snr`.
double zeta_for_snr(double target_snr, Index d);

struct RipReport {
  Index subset_size = 0;
  int trials = 0;
  double max_norm = 0.0;
  double mean_norm = 0.0;
  double bound = 2.0;
  bool pass = true;
};

/// Monte Carlo surrogate of the weak RIP condition: largest singular value
/// of `trials` random column subsets of size `subset_size`, compared with
/// the bound 2.
RipReport check_weak_rip(const Matrix& noise_matrix, Index subset_size, int trials,
                         std::uint64_t seed);

nlohmann::json to_json(const SnrReport& report);
nlohmann::json to_json(const RipReport& report);

}  // namespace tpi
