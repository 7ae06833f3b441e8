#include <cmath>
#include <map>

#include "doctest.h"
#include "tpi/errors.hpp"
#include "tpi/lvm.hpp"

using namespace tpi;

namespace {

// E[z_i z_j z_l] for z ~ N(mu, s^2 I) from per-coordinate raw moments
// E z = mu, E z^2 = mu^2 + s^2, E z^3 = mu^3 + 3 mu s^2.
double gaussian_triple(const Vector& mu, double s, Index i, Index j, Index l) {
  std::map<Index, int> power;
  ++power[i];
  ++power[j];
  ++power[l];
  double out = 1.0;
  for (auto [c, p] : power) {
    const double m = mu(c), s2 = s * s;
    out *= p == 1 ? m : p == 2 ? m * m + s2 : m * m * m + 3 * m * s2;
  }
  return out;
}

double frobenius_gap(const DenseTensor3& a, const DenseTensor3& b) {
  return (a - b).frobenius_norm();
}

}  // namespace

TEST_CASE("exchangeable model and population tensor") {
  MixtureModel m = MixtureModel::random_exchangeable(8, 5, 0.1, 3);
  m.validate();
  CHECK(m.priors.isApprox(Vector::Constant(5, 0.2)));
  CHECK(m.prior_ratio() == doctest::Approx(1.0));
  FactoredTensor3 t = m.population_tensor();
  CHECK(t.weights().isApprox(m.priors));
  CHECK(t.components() == m.factor(0));
  MixtureModel bad = m;
  bad.priors(0) = 0.5;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("noiseless samples are the factor columns") {
  MixtureModel m = MixtureModel::random_exchangeable(6, 4, 0.0, 1);
  SampleBatch b = sample_multiview(m, 50, 7);
  REQUIRE(b.views.size() == 3);
  REQUIRE(b.labels);
  for (Index tau = 0; tau < 50; ++tau) {
    Index h = (*b.labels)[tau];
    CHECK(h >= 0);
    CHECK(h < 4);
    for (const auto& v : b.views) CHECK(v.col(tau) == m.factor(0).col(h));
  }
  SampleBatch again = sample_multiview(m, 50, 7);
  CHECK(again.views[2] == b.views[2]);
  SnrReport r = snr(b, m);
  CHECK(std::isinf(r.empirical_snr));
  CHECK(std::isinf(r.theoretical_snr));
}

TEST_CASE("distinct per-view factors") {
  MixtureModel m;
  m.factors = {random_components(5, 3, 1), random_components(5, 3, 2), random_components(5, 3, 3)};
  m.priors = Vector::Constant(3, 1.0 / 3);
  SampleBatch b = sample_multiview(m, 10, 1);
  for (Index tau = 0; tau < 10; ++tau)
    for (int l = 0; l < 3; ++l) CHECK(b.views[l].col(tau) == m.factors[l].col((*b.labels)[tau]));
  CHECK_FALSE(m.population_tensor().symmetric());
}

TEST_CASE("empirical snr tracks the chi mean") {
  const Index d = 40;
  const double zeta = zeta_for_snr(2.0, d);
  CHECK(zeta == doctest::Approx(1.0 / (2.0 * std::sqrt(40.0))));
  MixtureModel m = MixtureModel::random_exchangeable(d, 10, zeta, 5);
  SampleBatch b = sample_multiview(m, 20000, 2);
  SnrReport r = snr(b, m);
  const double chi_mean =
      std::sqrt(2.0) * std::exp(std::lgamma((d + 1) / 2.0) - std::lgamma(d / 2.0));
  const double chi_var = d - chi_mean * chi_mean;
  const double se = zeta * std::sqrt(chi_var / 20000);
  CHECK(std::abs(r.mean_noise_norm - zeta * chi_mean) < 4 * se);
  CHECK(r.theoretical_snr == doctest::Approx(2.0));
  SampleBatch unlabeled = b;
  unlabeled.labels.reset();
  CHECK_THROWS_AS(snr(unlabeled, m), InvalidArgument);
}

TEST_CASE("empirical third moment by direct sums") {
  MixtureModel m = MixtureModel::random_exchangeable(4, 3, 0.3, 2);
  SampleBatch b = sample_multiview(m, 30, 4);
  DenseTensor3 t = empirical_third_moment(b);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j)
      for (Index l = 0; l < 4; ++l) {
        double s = 0;
        for (Index tau = 0; tau < 30; ++tau)
          s += b.views[0](i, tau) * b.views[1](j, tau) * b.views[2](l, tau);
        CHECK(t.at(i, j, l) == doctest::Approx(s / 30).epsilon(1e-12));
      }
  SampleMomentTensor implicit(b);
  Vector v = Vector::LinSpaced(4, -1, 2), w = Vector::LinSpaced(4, 0.5, -0.5);
  for (Mode mode : {Mode::first, Mode::second, Mode::third})
    CHECK((implicit.contract(mode, v, w) - t.contract(mode, v, w)).norm() < 1e-12);
}

TEST_CASE("empirical moment converges at the root-n rate") {
  MixtureModel m = MixtureModel::random_exchangeable(6, 4, 0.2, 9);
  DenseTensor3 pop = densify(m.population_tensor());
  double e1 = 0, e2 = 0;
  for (std::uint64_t s = 0; s < 8; ++s) {
    e1 += frobenius_gap(empirical_third_moment(sample_multiview(m, 2000, 100 + s)), pop);
    e2 += frobenius_gap(empirical_third_moment(sample_multiview(m, 32000, 200 + s)), pop);
  }
  CHECK(e1 / e2 > 3.0);
  CHECK(e1 / e2 < 5.3);
}

TEST_CASE("gmm population moment against per-coordinate gaussian moments") {
  SphericalGmm g;
  g.means = random_components(4, 3, 6, ComponentDistribution::gaussian);
  g.priors = Vector(3);
  g.priors << 0.2, 0.3, 0.5;
  g.sigma = 0.7;
  DenseTensor3 raw = gmm_population_raw_moment(g);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j)
      for (Index l = 0; l < 4; ++l) {
        double ref = 0;
        for (Index c = 0; c < 3; ++c) ref += g.priors(c) * gaussian_triple(g.means.col(c), g.sigma, i, j, l);
        CHECK(raw.at(i, j, l) == doctest::Approx(ref).epsilon(1e-13));
      }
  DenseTensor3 corrected = gmm_correct_moment(raw, g.means * g.priors, g.sigma);
  DenseTensor3 target = densify(FactoredTensor3::absorb_norms(g.means, g.priors));
  CHECK(frobenius_gap(corrected, target) < 1e-12);
}

TEST_CASE("gmm sampling and the plug-in moment") {
  SphericalGmm g;
  g.means = random_components(3, 2, 1);
  g.priors = Vector::Constant(2, 0.5);
  g.sigma = 0.3;
  GmmSample s = sample_gmm(g, 200000, 3);
  CHECK(s.labels.size() == 200000);
  DenseTensor3 m3 = gmm_modified_moment(g, s.points);
  DenseTensor3 target = densify(FactoredTensor3::absorb_norms(g.means, g.priors));
  CHECK(frobenius_gap(m3, target) < 0.05);
  g.sigma = -1;
  CHECK_THROWS_AS(g.validate(), InvalidArgument);
}

TEST_CASE("weak rip surrogate") {
  Matrix q = Eigen::HouseholderQR<Matrix>(random_components(10, 10, 2, ComponentDistribution::gaussian))
                 .householderQ();
  RipReport r = check_weak_rip(q, 4, 20, 1);
  CHECK(r.max_norm == doctest::Approx(1.0));
  CHECK(r.pass);
  RipReport big = check_weak_rip(3.0 * q, 2, 5, 1);
  CHECK_FALSE(big.pass);
  CHECK_THROWS_AS(check_weak_rip(q, 11, 5, 1), InvalidArgument);
}

TEST_CASE("custom noise") {
  MixtureModel m = MixtureModel::random_exchangeable(5, 2, 0.0, 1);
  m.noise_kind = NoiseKind::custom;
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  m.custom_noise = [](CounterRng&, Index d) { return Vector::Constant(d, 0.5); };
  SampleBatch b = sample_multiview(m, 4, 1);
  CHECK((b.views[0].col(0) - m.factor(0).col((*b.labels)[0])).isApprox(Vector::Constant(5, 0.5)));
  CHECK(std::isnan(snr(b, m).theoretical_snr));
}
