#include "tpi/lvm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "tpi/errors.hpp"

namespace tpi {
namespace {

constexpr Index kMomentChunk = 1024;

void validate_priors(const Vector& priors, Index k) {
  if (priors.size() != k) {
    throw InvalidArgument(fmt::format("expected {} priors, got {}", k, priors.size()));
  }
  for (Index j = 0; j < k; ++j) {
    if (!(priors(j) > 0.0)) throw InvalidArgument(fmt::format("prior {} must be positive", j));
  }
  if (std::abs(priors.sum() - 1.0) > 1e-12) {
    throw InvalidArgument(fmt::format("priors sum to {:.17g}, expected 1", priors.sum()));
  }
}

void validate_unit_columns(const Matrix& m, const char* what) {
  for (Index j = 0; j < m.cols(); ++j) {
    if (std::abs(m.col(j).norm() - 1.0) > kUnitNormTolerance) {
      throw InvalidArgument(fmt::format("{}: column {} is not unit norm", what, j));
    }
  }
}

Index draw_state(const Vector& cumulative, CounterRng& rng) {
  const double u = rng.uniform() * cumulative(cumulative.size() - 1);
  const double* begin = cumulative.data();
  const double* end = begin + cumulative.size();
  const auto it = std::upper_bound(begin, end, u);
  return std::min<Index>(static_cast<Index>(it - begin), cumulative.size() - 1);
}

Vector cumulative_of(const Vector& priors) {
  Vector c(priors.size());
  std::partial_sum(priors.begin(), priors.end(), c.begin());
  return c;
}

// (1/n) sum_tau z1 (x) z2 (x) z3, accumulated in fixed-size sample chunks so
// the summation order does not depend on anything but n.
DenseTensor3 third_moment(const Matrix& z1, const Matrix& z2, const Matrix& z3) {
  const Index d = z1.rows();
  const Index n = z1.cols();
  if (n < 1) throw InvalidArgument("third moment needs at least one sample");
  DenseTensor3 probe(d);  // budget check
  std::vector<double> entries(static_cast<std::size_t>(d * d * d), 0.0);
  // unfolded(j*d + l, i) = T(i, j, l)
  Eigen::Map<Matrix> unfolded(entries.data(), d * d, d);
  Matrix pairs(d * d, std::min(n, kMomentChunk));
  for (Index start = 0; start < n; start += kMomentChunk) {
    const Index count = std::min(kMomentChunk, n - start);
    for (Index c = 0; c < count; ++c) {
      const auto a = z2.col(start + c);
      const auto b = z3.col(start + c);
      for (Index j = 0; j < d; ++j) pairs.col(c).segment(j * d, d) = a(j) * b;
    }
    unfolded.noalias() += pairs.leftCols(count) * z1.middleCols(start, count).transpose();
  }
  unfolded /= static_cast<double>(n);
  return DenseTensor3(d, std::move(entries), false);
}

}  // namespace

// ---------------------------------------------------------------------------
// MixtureModel

MixtureModel MixtureModel::random_exchangeable(Index d, Index k, double zeta, std::uint64_t seed) {
  MixtureModel model;
  model.factors = {random_components(d, k, derive_seed(seed, 0xA11CE))};
  model.priors = Vector::Constant(k, 1.0 / static_cast<double>(k));
  model.noise_scale = zeta;
  model.validate();
  return model;
}

FactoredTensor3 MixtureModel::population_tensor() const {
  validate();
  if (factors.size() == 1) return FactoredTensor3(factors[0], priors);
  return FactoredTensor3(factors[0], factors[1], factors[2], priors);
}

double MixtureModel::prior_ratio() const { return priors.maxCoeff() / priors.minCoeff(); }

void MixtureModel::validate() const {
  if (factors.size() != 1 && factors.size() != 3) {
    throw InvalidArgument("mixture model needs one shared factor matrix or three per-view ones");
  }
  const Index d = factors[0].rows();
  const Index k = factors[0].cols();
  if (d < 1 || k < 1) throw InvalidArgument("mixture model needs d >= 1 and k >= 1");
  for (const auto& f : factors) {
    if (f.rows() != d || f.cols() != k) throw InvalidArgument("factor matrices differ in shape");
    validate_unit_columns(f, "mixture factor");
  }
  validate_priors(priors, k);
  if (views < 3) throw InvalidArgument(fmt::format("need at least 3 views, got {}", views));
  if (!(noise_scale >= 0.0)) throw InvalidArgument("noise scale must be nonnegative");
  if (noise_kind == NoiseKind::custom && !custom_noise) {
    throw InvalidArgument("custom noise kind needs a sampler");
  }
}

void SampleBatch::validate() const {
  if (views.size() < 3) throw InvalidArgument("sample batch needs at least 3 views");
  for (const auto& v : views) {
    if (v.rows() != dim() || v.cols() != size()) {
      throw InvalidArgument("sample batch views differ in shape");
    }
  }
  if (size() < 1) throw InvalidArgument("sample batch is empty");
  if (labels && static_cast<Index>(labels->size()) != size()) {
    throw InvalidArgument("sample batch label count does not match sample count");
  }
}

SampleBatch sample_multiview(const MixtureModel& model, Index n, std::uint64_t seed) {
  model.validate();
  if (n < 1) throw InvalidArgument("sample_multiview: n must be >= 1");
  const Index d = model.dim();
  const Vector cumulative = cumulative_of(model.priors);
  SampleBatch batch;
  batch.views.assign(static_cast<std::size_t>(model.views), Matrix(d, n));
  batch.labels.emplace(static_cast<std::size_t>(n));
  for (Index tau = 0; tau < n; ++tau) {
    CounterRng rng(seed, static_cast<std::uint64_t>(tau));
    const Index h = draw_state(cumulative, rng);
    (*batch.labels)[static_cast<std::size_t>(tau)] = h;
    for (int l = 0; l < model.views; ++l) {
      auto z = batch.views[static_cast<std::size_t>(l)].col(tau);
      z = model.factor(l).col(h);
      if (model.noise_kind == NoiseKind::custom) {
        z += model.custom_noise(rng, d);
      } else if (model.noise_scale > 0.0) {
        for (Index i = 0; i < d; ++i) z(i) += model.noise_scale * rng.normal();
      }
    }
  }
  return batch;
}

DenseTensor3 empirical_third_moment(const SampleBatch& batch) {
  batch.validate();
  return third_moment(batch.views[0], batch.views[1], batch.views[2]);
}

SampleMomentTensor::SampleMomentTensor(const SampleBatch& batch)
    : views_{batch.views.at(0), batch.views.at(1), batch.views.at(2)} {
  batch.validate();
}

Vector SampleMomentTensor::contract(Mode free, const Vector& v, const Vector& w) const {
  const Index d = dim();
  if (v.size() != d || w.size() != d) {
    throw InvalidArgument("SampleMomentTensor::contract: dimension mismatch");
  }
  const int f = static_cast<int>(free);
  const Matrix& open = views_[f];
  const Matrix& left = views_[f == 0 ? 1 : 0];
  const Matrix& right = views_[f == 2 ? 1 : 2];
  const Vector coeff = (left.transpose() * v).cwiseProduct(right.transpose() * w);
  return open * coeff / static_cast<double>(open.cols());
}

// ---------------------------------------------------------------------------
// Spherical Gaussian mixtures

void SphericalGmm::validate() const {
  if (means.rows() < 1 || means.cols() < 1) throw InvalidArgument("GMM needs d >= 1 and k >= 1");
  validate_priors(priors, means.cols());
  if (!(sigma >= 0.0)) throw InvalidArgument("GMM sigma must be nonnegative");
}

GmmSample sample_gmm(const SphericalGmm& gmm, Index n, std::uint64_t seed) {
  gmm.validate();
  if (n < 1) throw InvalidArgument("sample_gmm: n must be >= 1");
  const Index d = gmm.dim();
  const Vector cumulative = cumulative_of(gmm.priors);
  GmmSample out{Matrix(d, n), std::vector<Index>(static_cast<std::size_t>(n))};
  for (Index tau = 0; tau < n; ++tau) {
    CounterRng rng(seed, static_cast<std::uint64_t>(tau));
    const Index h = draw_state(cumulative, rng);
    out.labels[static_cast<std::size_t>(tau)] = h;
    for (Index i = 0; i < d; ++i) out.points(i, tau) = gmm.means(i, h) + gmm.sigma * rng.normal();
  }
  return out;
}

DenseTensor3 gmm_correct_moment(DenseTensor3 raw, const Vector& mean, double sigma) {
  const Index d = raw.dim();
  if (mean.size() != d) throw InvalidArgument("gmm_correct_moment: mean has wrong length");
  const double s2 = sigma * sigma;
  if (s2 == 0.0) return raw;
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      // m (x) e_j (x) e_j, e_j (x) m (x) e_j, e_j (x) e_j (x) m
      raw.at(i, j, j) -= s2 * mean(i);
      raw.at(j, i, j) -= s2 * mean(i);
      raw.at(j, j, i) -= s2 * mean(i);
    }
  }
  return raw;
}

DenseTensor3 gmm_modified_moment(const SphericalGmm& gmm, const Matrix& points) {
  gmm.validate();
  if (points.rows() != gmm.dim()) throw InvalidArgument("gmm_modified_moment: dimension mismatch");
  if (points.cols() < 1) throw InvalidArgument("gmm_modified_moment: no samples");
  DenseTensor3 raw = third_moment(points, points, points);
  const Vector mean = points.rowwise().mean();
  return gmm_correct_moment(std::move(raw), mean, gmm.sigma);
}

DenseTensor3 gmm_population_raw_moment(const SphericalGmm& gmm) {
  gmm.validate();
  const Index d = gmm.dim();
  const double s2 = gmm.sigma * gmm.sigma;
  DenseTensor3 out(d);
  for (Index c = 0; c < gmm.rank(); ++c) {
    const auto a = gmm.means.col(c);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j)
        for (Index l = 0; l < d; ++l) out.at(i, j, l) += gmm.priors(c) * a(i) * a(j) * a(l);
  }
  const Vector mean = gmm.means * gmm.priors;
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      out.at(i, j, j) += s2 * mean(i);
      out.at(j, i, j) += s2 * mean(i);
      out.at(j, j, i) += s2 * mean(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SNR and weak RIP

SnrReport snr(const SampleBatch& batch, const MixtureModel& model) {
  batch.validate();
  if (!batch.labels) throw InvalidArgument("snr: batch has no labels");
  const Matrix& z1 = batch.views[0];
  const Matrix& a = model.factor(0);
  double total = 0.0;
  for (Index tau = 0; tau < batch.size(); ++tau) {
    total += (z1.col(tau) - a.col((*batch.labels)[static_cast<std::size_t>(tau)])).norm();
  }
  SnrReport report;
  report.mean_noise_norm = total / static_cast<double>(batch.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  report.empirical_snr = report.mean_noise_norm == 0.0 ? inf : 1.0 / report.mean_noise_norm;
  if (model.noise_kind == NoiseKind::spherical_gaussian) {
    report.theoretical_noise_norm = model.noise_scale * std::sqrt(static_cast<double>(model.dim()));
    report.theoretical_snr =
        report.theoretical_noise_norm == 0.0 ? inf : 1.0 / report.theoretical_noise_norm;
  } else {
    report.theoretical_noise_norm = std::numeric_limits<double>::quiet_NaN();
    report.theoretical_snr = std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

double zeta_for_snr(double target_snr, Index d) {
  if (!(target_snr > 0.0)) throw InvalidArgument("zeta_for_snr: target SNR must be positive");
  return 1.0 / (target_snr * std::sqrt(static_cast<double>(d)));
}

RipReport check_weak_rip(const Matrix& noise_matrix, Index subset_size, int trials,
                         std::uint64_t seed) {
  const Index n = noise_matrix.cols();
  if (subset_size < 1 || subset_size > n) {
    throw InvalidArgument(fmt::format("check_weak_rip: subset size {} not in [1, {}]", subset_size, n));
  }
  if (trials < 1) throw InvalidArgument("check_weak_rip: trials must be >= 1");
  RipReport report;
  report.subset_size = subset_size;
  report.trials = trials;
  std::vector<Index> order(static_cast<std::size_t>(n));
  Matrix block(noise_matrix.rows(), subset_size);
  double total = 0.0;
  for (int t = 0; t < trials; ++t) {
    CounterRng rng(seed, static_cast<std::uint64_t>(t));
    std::iota(order.begin(), order.end(), Index{0});
    for (Index s = 0; s < subset_size; ++s) {
      const auto pick = s + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - s)));
      std::swap(order[static_cast<std::size_t>(s)], order[static_cast<std::size_t>(pick)]);
      block.col(s) = noise_matrix.col(order[static_cast<std::size_t>(s)]);
    }
    const Matrix gram = block.transpose() * block;
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    const double norm = std::sqrt(std::max(0.0, eig.eigenvalues().maxCoeff()));
    report.max_norm = std::max(report.max_norm, norm);
    total += norm;
  }
  report.mean_norm = total / trials;
  report.pass = report.max_norm <= report.bound;
  return report;
}

namespace {

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  if (std::isinf(v) && v > 0) return "inf";
  return nullptr;
}

}  // namespace

nlohmann::json to_json(const SnrReport& report) {
  return {{"empirical_snr", finite_or_null(report.empirical_snr)},
          {"mean_noise_norm", report.mean_noise_norm},
          {"theoretical_noise_norm", finite_or_null(report.theoretical_noise_norm)},
          {"theoretical_snr", finite_or_null(report.theoretical_snr)}};
}

nlohmann::json to_json(const RipReport& report) {
  return {{"subset_size", report.subset_size}, {"trials", report.trials},
          {"max_norm", report.max_norm},       {"mean_norm", report.mean_norm},
          {"bound", report.bound},             {"pass", report.pass}};
}

}  // namespace tpi
