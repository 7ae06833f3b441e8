#include "tpi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <fmt/format.h>

#include "tpi/errors.hpp"
#include "tpi/rng.hpp"

namespace tpi {
namespace {

void require_length(const Vector& v, Index d, const char* what) {
  if (v.size() != d) {
    throw InvalidArgument(
        fmt::format("{}: vector has length {} but tensor dimension is {}", what, v.size(), d));
  }
}

void require_dense_budget(Index d) {
  if (d < 1) throw InvalidArgument(fmt::format("dense tensor dimension must be >= 1, got {}", d));
  if (d > kMaxDenseDim) {
    throw ResourceError(fmt::format(
        "dense tensor of dimension {} exceeds the budget of {} per mode", d, kMaxDenseDim));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// FactoredTensor3

FactoredTensor3::FactoredTensor3(Matrix components, Vector weights)
    : modes_{components, components, components},
      weights_(std::move(weights)),
      symmetric_(true) {
  validate();
}

FactoredTensor3::FactoredTensor3(Matrix first, Matrix second, Matrix third, Vector weights)
    : modes_{std::move(first), std::move(second), std::move(third)},
      weights_(std::move(weights)),
      symmetric_(false) {
  validate();
}

FactoredTensor3 FactoredTensor3::absorb_norms(const Matrix& raw_components,
                                              const Vector& weights) {
  if (weights.size() != raw_components.cols()) {
    throw InvalidArgument("absorb_norms: weight count does not match component count");
  }
  Vector scaled = weights;
  for (Index j = 0; j < raw_components.cols(); ++j) {
    const double n = raw_components.col(j).norm();
    scaled(j) *= n * n * n;
  }
  return FactoredTensor3(normalize_columns(raw_components), std::move(scaled));
}

void FactoredTensor3::validate() const {
  const Index d = modes_[0].rows();
  const Index k = modes_[0].cols();
  if (d < 1 || k < 1) {
    throw InvalidArgument(fmt::format("factored tensor needs d >= 1 and k >= 1, got d={} k={}", d, k));
  }
  if (weights_.size() != k) {
    throw InvalidArgument(
        fmt::format("factored tensor has {} components but {} weights", k, weights_.size()));
  }
  for (const auto& m : modes_) {
    if (m.rows() != d || m.cols() != k) {
      throw InvalidArgument("factored tensor: per-mode component matrices differ in shape");
    }
    for (Index j = 0; j < k; ++j) {
      const double n = m.col(j).norm();
      if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
        throw InvalidArgument(fmt::format("component {} has norm {:.17g}, expected 1", j, n));
      }
    }
  }
  for (Index j = 0; j < k; ++j) {
    if (!std::isfinite(weights_(j)) || weights_(j) == 0.0) {
      throw InvalidArgument(fmt::format("weight {} must be finite and nonzero", j));
    }
  }
}

double FactoredTensor3::weight_ratio() const {
  const Vector a = weights_.cwiseAbs();
  return a.maxCoeff() / a.minCoeff();
}

Vector FactoredTensor3::contract(Mode free, const Vector& v, const Vector& w) const {
  require_length(v, dim(), "FactoredTensor3::contract");
  require_length(w, dim(), "FactoredTensor3::contract");
  const int f = static_cast<int>(free);
  const Matrix& open = modes_[f];
  const Matrix& left = modes_[f == 0 ? 1 : 0];
  const Matrix& right = modes_[f == 2 ? 1 : 2];
  const Vector coeff = weights_.cwiseProduct((left.transpose() * v).cwiseProduct(right.transpose() * w));
  return open * coeff;
}

// ---------------------------------------------------------------------------
// DenseTensor3

DenseTensor3::DenseTensor3(Index dim, bool symmetric) : dim_(dim), symmetric_(symmetric) {
  require_dense_budget(dim);
  entries_.assign(static_cast<std::size_t>(dim * dim * dim), 0.0);
}

DenseTensor3::DenseTensor3(Index dim, std::vector<double> entries, bool symmetric)
    : dim_(dim), entries_(std::move(entries)), symmetric_(symmetric) {
  require_dense_budget(dim);
  if (entries_.size() != static_cast<std::size_t>(dim * dim * dim)) {
    throw InvalidArgument(fmt::format("dense tensor of dimension {} needs {} entries, got {}", dim,
                                      dim * dim * dim, entries_.size()));
  }
  if (symmetric_ && symmetry_defect() > 1e-9) {
    throw InvalidArgument("dense tensor flagged symmetric fails the permutation check");
  }
}

Vector DenseTensor3::contract(Mode free, const Vector& v, const Vector& w) const {
  require_length(v, dim_, "DenseTensor3::contract");
  require_length(w, dim_, "DenseTensor3::contract");
  const Index d = dim_;
  // Column i of `slabs` holds the (j,l) slice T(i,:,:) with offset j*d + l.
  const Eigen::Map<const Matrix> slabs(entries_.data(), d * d, d);
  if (free == Mode::first) {
    // pair(l, j) = w_l * v_j, laid out to match offset j*d + l.
    const Matrix pair = w * v.transpose();
    const Eigen::Map<const Vector> pair_vec(pair.data(), d * d);
    return slabs.transpose() * pair_vec;
  }
  // folded(l, j) = sum_i T(i,j,l) v_i
  const Vector folded_vec = slabs * v;
  const Eigen::Map<const Matrix> folded(folded_vec.data(), d, d);
  if (free == Mode::second) return folded.transpose() * w;
  return folded * w;
}

double DenseTensor3::frobenius_norm() const {
  return Eigen::Map<const Vector>(entries_.data(), static_cast<Index>(entries_.size())).norm();
}

double DenseTensor3::symmetry_defect() const {
  double scale = 0.0;
  for (double e : entries_) scale = std::max(scale, std::abs(e));
  if (scale == 0.0) return 0.0;
  double worst = 0.0;
  for (Index i = 0; i < dim_; ++i) {
    for (Index j = 0; j < dim_; ++j) {
      for (Index l = 0; l < dim_; ++l) {
        const double e = at(i, j, l);
        const double perms[5] = {at(i, l, j), at(j, i, l), at(j, l, i), at(l, i, j), at(l, j, i)};
        for (double p : perms) worst = std::max(worst, std::abs(e - p));
      }
    }
  }
  return worst / scale;
}

DenseTensor3 DenseTensor3::scaled(double factor) const {
  std::vector<double> out(entries_);
  for (double& e : out) e *= factor;
  DenseTensor3 result(dim_);
  result.entries_ = std::move(out);
  result.symmetric_ = symmetric_;
  return result;
}

DenseTensor3& DenseTensor3::operator+=(const DenseTensor3& other) {
  if (other.dim_ != dim_) throw InvalidArgument("dense tensor addition: dimension mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] += other.entries_[i];
  symmetric_ = symmetric_ && other.symmetric_;
  return *this;
}

DenseTensor3& DenseTensor3::operator-=(const DenseTensor3& other) {
  if (other.dim_ != dim_) throw InvalidArgument("dense tensor subtraction: dimension mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] -= other.entries_[i];
  symmetric_ = symmetric_ && other.symmetric_;
  return *this;
}

DenseTensor3 operator-(DenseTensor3 lhs, const DenseTensor3& rhs) {
  lhs -= rhs;
  return lhs;
}

// ---------------------------------------------------------------------------
// PerturbedTensor

PerturbedTensor::PerturbedTensor(FactoredTensor3 signal, DenseTensor3 noise,
                                 double noise_spectral_norm)
    : signal_(std::move(signal)),
      noise_(std::move(noise)),
      noise_spectral_norm_(noise_spectral_norm) {
  if (signal_.dim() != noise_.dim()) {
    throw InvalidArgument(fmt::format("perturbed tensor: signal dimension {} but noise dimension {}",
                                      signal_.dim(), noise_.dim()));
  }
  if (!(noise_spectral_norm_ >= 0.0)) {
    throw InvalidArgument("perturbed tensor: noise spectral norm must be nonnegative");
  }
}

Vector PerturbedTensor::contract(Mode free, const Vector& v, const Vector& w) const {
  return signal_.contract(free, v, w) + noise_.contract(free, v, w);
}

// ---------------------------------------------------------------------------
// Free functions

Vector contract_1(const Tensor3& tensor, const Vector& v, const Vector& w) {
  return tensor.contract(Mode::first, v, w);
}

double contract_scalar(const Tensor3& tensor, const Vector& u, const Vector& v, const Vector& w) {
  if (u.size() != tensor.dim()) {
    throw InvalidArgument(fmt::format("contract_scalar: vector has length {} but tensor dimension is {}",
                                      u.size(), tensor.dim()));
  }
  return u.dot(tensor.contract(Mode::first, v, w));
}

DenseTensor3 densify(const FactoredTensor3& tensor) {
  const Index d = tensor.dim();
  DenseTensor3 out(d);  // checks the budget
  const Matrix& a = tensor.components(Mode::first);
  const Matrix& b = tensor.components(Mode::second);
  const Matrix& c = tensor.components(Mode::third);
  std::vector<double> entries(static_cast<std::size_t>(d * d * d), 0.0);
  for (Index j = 0; j < tensor.rank(); ++j) {
    const double lambda = tensor.weights()(j);
    for (Index i1 = 0; i1 < d; ++i1) {
      const double s1 = lambda * a(i1, j);
      for (Index i2 = 0; i2 < d; ++i2) {
        const double s2 = s1 * b(i2, j);
        double* row = entries.data() + (i1 * d + i2) * d;
        for (Index i3 = 0; i3 < d; ++i3) row[i3] += s2 * c(i3, j);
      }
    }
  }
  // Symmetric only by construction; floating-point summation can leave
  // ~1e-16 relative asymmetry, well inside the checked tolerance.
  return DenseTensor3(d, std::move(entries), tensor.symmetric());
}

Matrix normalize_columns(Matrix m) {
  for (Index j = 0; j < m.cols(); ++j) {
    const double n = m.col(j).norm();
    if (n == 0.0) throw InvalidArgument(fmt::format("column {} is zero and cannot be normalized", j));
    m.col(j) /= n;
  }
  return m;
}

Matrix random_components(Index d, Index k, std::uint64_t seed, ComponentDistribution distribution) {
  if (d < 1 || k < 1) {
    throw InvalidArgument(fmt::format("random_components needs d >= 1 and k >= 1, got d={} k={}", d, k));
  }
  Matrix a(d, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index j = 0; j < k; ++j) {
    CounterRng rng(seed, static_cast<std::uint64_t>(j));
    for (Index i = 0; i < d; ++i) a(i, j) = scale * rng.normal();
  }
  if (distribution == ComponentDistribution::unit_sphere) a = normalize_columns(std::move(a));
  return a;
}

DenseTensor3 random_symmetric_tensor(Index d, std::uint64_t seed) {
  require_dense_budget(d);
  std::vector<double> entries(static_cast<std::size_t>(d * d * d));
  auto at = [&](Index i, Index j, Index l) -> double& {
    return entries[static_cast<std::size_t>((i * d + j) * d + l)];
  };
  CounterRng rng(seed);
  for (Index i = 0; i < d; ++i) {
    for (Index j = i; j < d; ++j) {
      for (Index l = j; l < d; ++l) {
        const double g = rng.normal();
        at(i, j, l) = at(i, l, j) = at(j, i, l) = at(j, l, i) = at(l, i, j) = at(l, j, i) = g;
      }
    }
  }
  return DenseTensor3(d, std::move(entries), true);
}

double spectral_norm_estimate(const Tensor3& tensor, const SpectralNormOptions& options) {
  if (options.restarts < 1) throw InvalidArgument("spectral_norm_estimate: restarts must be >= 1");
  if (options.iters < 0) throw InvalidArgument("spectral_norm_estimate: iters must be >= 0");
  const Index d = tensor.dim();
  constexpr double kTiny = 1e-300;

  auto random_unit = [d](CounterRng& rng) {
    Vector x(d);
    for (Index i = 0; i < d; ++i) x(i) = rng.normal();
    return Vector(x / x.norm());
  };

  double best = 0.0;
  for (int r = 0; r < options.restarts; ++r) {
    CounterRng rng(options.seed, static_cast<std::uint64_t>(r));
    if (tensor.symmetric()) {
      Vector x = random_unit(rng);
      for (int it = 0; it <= options.iters; ++it) {
        const Vector g = tensor.contract(Mode::first, x, x);
        best = std::max(best, std::abs(x.dot(g)));
        const double n = g.norm();
        if (it == options.iters || n < kTiny) break;
        x = g / n;
      }
    } else {
      Vector x = random_unit(rng);
      Vector y = random_unit(rng);
      Vector z = random_unit(rng);
      for (int it = 0; it <= options.iters; ++it) {
        Vector g = tensor.contract(Mode::first, y, z);
        best = std::max(best, std::abs(x.dot(g)));
        if (it == options.iters || g.norm() < kTiny) break;
        x = g / g.norm();
        g = tensor.contract(Mode::second, x, z);
        if (g.norm() < kTiny) break;
        y = g / g.norm();
        g = tensor.contract(Mode::third, x, y);
        if (g.norm() < kTiny) break;
        z = g / g.norm();
      }
    }
  }
  return best;
}

DenseTensor3 scale_noise_to(const DenseTensor3& noise, double target, const SpectralNormOptions& options) {
  if (!(target >= 0.0)) throw InvalidArgument("scale_noise_to: target must be nonnegative");
  const double current = spectral_norm_estimate(noise, options);
  if (current == 0.0) throw InvalidArgument("scale_noise_to: noise tensor is zero");
  return noise.scaled(target / current);
}

PerturbedTensor make_perturbed(FactoredTensor3 signal, DenseTensor3 noise,
                               const SpectralNormOptions& options) {
  const double norm = spectral_norm_estimate(noise, options);
  return PerturbedTensor(std::move(signal), std::move(noise), norm);
}

}  // namespace tpi
