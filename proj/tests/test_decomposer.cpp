#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "tpi/decomposer.hpp"
#include "tpi/errors.hpp"
#include "tpi/rng.hpp"

using namespace tpi;

namespace {

Matrix orthonormal(Index d, std::uint64_t seed) {
  return Eigen::HouseholderQR<Matrix>(random_components(d, d, seed, ComponentDistribution::gaussian))
      .householderQ();
}

Matrix noisy_columns(const Matrix& a, double noise, std::uint64_t seed) {
  CounterRng rng(seed);
  Matrix out = a;
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) out(i, j) += noise / std::sqrt(double(a.rows())) * rng.normal();
    out.col(j).normalize();
  }
  return out;
}

// Best sum of |<x_i, a_j>| over all partial injections, by enumeration.
double brute_best(const Matrix& est, const Matrix& truth) {
  Matrix g = (est.transpose() * truth).cwiseAbs();
  const Index m = g.rows(), k = g.cols();
  std::vector<Index> cols(static_cast<std::size_t>(std::max(m, k)));
  std::iota(cols.begin(), cols.end(), 0);
  double best = 0;
  do {
    double s = 0;
    for (Index i = 0; i < m; ++i)
      if (cols[i] < k) s += g(i, cols[i]);
    best = std::max(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

double matched_sum(const MatchReport& r) {
  double s = 0;
  for (double c : r.per_component_correlations) s += c;
  return s;
}

}  // namespace

TEST_CASE("orthogonal tensor is recovered exactly") {
  Matrix q = orthonormal(10, 1);
  Vector w = Vector::LinSpaced(10, 1.0, 2.0);
  FactoredTensor3 t(q, w);
  PowerConfig p;
  p.max_iters = 40;
  ClusterConfig c;
  c.refine_iters = 40;
  DecompositionResult r = decompose(t, noisy_columns(q, 0.3, 2), p, c);
  REQUIRE(r.size() == 10);
  MatchReport m = match_and_score(r.estimates, q);
  CHECK(m.missed.empty());
  for (double corr : m.per_component_correlations) CHECK(corr >= 1 - 1e-8);
  for (Index i = 0; i < r.size(); ++i) {
    CHECK(std::abs(r.weights(i) - w(*m.permutation[i])) < 1e-6);
    CHECK(estimate_weight(t, r.estimates.col(i)) >= 0);
    CHECK(r.diagnostics[i].monotone);
  }
  CHECK(r.duplicates_dropped == 0);
  // Weights are emitted in decreasing order: the largest survivor goes first.
  for (Index i = 1; i < r.size(); ++i) CHECK(r.weights(i) <= r.weights(i - 1) + 1e-9);
}

TEST_CASE("negative weights are sign-normalized") {
  Matrix q = orthonormal(4, 3);
  Vector w(4);
  w << -1, 1.5, -2, 1;
  FactoredTensor3 t(q, w);
  PowerConfig p;
  p.max_iters = 30;
  DecompositionResult r = decompose(t, noisy_columns(q, 0.1, 5), p, {});
  REQUIRE(r.size() == 4);
  for (Index i = 0; i < 4; ++i) CHECK(estimate_weight(t, r.estimates.col(i)) > 0);
}

TEST_CASE("duplicate starts collapse into one cluster") {
  Matrix q = orthonormal(6, 2);
  FactoredTensor3 t(q, Vector::Ones(6));
  Matrix inits(6, 9);
  for (Index j = 0; j < 9; ++j) inits.col(j) = q.col(j % 3);
  inits = noisy_columns(inits, 0.2, 8);
  PowerConfig p;
  p.max_iters = 30;
  DecompositionResult r = decompose(t, inits, p, {});
  CHECK(r.size() == 3);
  Index total = 0;
  for (Index s : r.cluster_sizes) total += s;
  CHECK(total == 9);
  for (Index s : r.cluster_sizes) CHECK(s == 3);
  ClusterConfig capped;
  capped.max_components = 2;
  CHECK(decompose(t, inits, p, capped).size() == 2);
}

TEST_CASE("emitted estimates are pairwise separated") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    FactoredTensor3 t(random_components(12, 18, seed), Vector::Ones(18));
    PowerConfig p;
    p.max_iters = 10;
    DecompositionResult r = decompose(t, random_components(12, 40, seed + 100), p, {});
    for (Index i = 0; i < r.size(); ++i)
      for (Index j = 0; j < i; ++j)
        CHECK(std::abs(r.estimates.col(i).dot(r.estimates.col(j))) <= 0.25);
  }
}

TEST_CASE("decompose argument checks") {
  FactoredTensor3 t(orthonormal(3, 1), Vector::Ones(3));
  CHECK_THROWS_AS(decompose(t, Matrix(3, 0), {}, {}), InvalidArgument);
  ClusterConfig bad;
  bad.nu = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad.nu = 0.5;
  bad.refine_iters = -1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("refit weights on exact estimates") {
  Matrix a = random_components(8, 5, 4);
  Vector w(5);
  w << 1, 2, 3, -1, 0.5;
  FactoredTensor3 t(a, w);
  CHECK((refit_weights(t, a) - w).norm() < 1e-10);
}

TEST_CASE("hungarian matches enumeration on small instances") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    CounterRng rng(seed);
    Index m = 1 + static_cast<Index>(rng.below(5));
    Index k = 1 + static_cast<Index>(rng.below(5));
    Matrix est = random_components(4, m, seed * 2 + 1);
    Matrix truth = random_components(4, k, seed * 2 + 2);
    MatchReport r = match_and_score(est, truth);
    CHECK(r.optimal);
    CHECK(matched_sum(r) == doctest::Approx(brute_best(est, truth)).epsilon(1e-12));
    CHECK(r.matched() == std::min(m, k));
    CHECK(static_cast<Index>(r.missed.size()) == k - r.matched());
    MatchReport g = match_greedy(est, truth);
    CHECK_FALSE(g.optimal);
    CHECK(matched_sum(g) <= matched_sum(r) + 1e-12);
  }
}

TEST_CASE("greedy can be suboptimal where hungarian is not") {
  // Greedy takes the 0.9 pair first and is left with 0.1.
  Matrix g(2, 2);
  g << 0.9, 0.8, 0.8, 0.1;
  Matrix truth = Matrix::Identity(2, 2);
  // est_i has correlations g(i, :) with e1, e2 (not unit; scoring uses |<.,.>| only).
  Matrix est = g.transpose();
  CHECK(matched_sum(match_and_score(est, truth)) == doctest::Approx(1.6));
  CHECK(matched_sum(match_greedy(est, truth)) == doctest::Approx(1.0));
}

TEST_CASE("signs, frobenius error and missed columns") {
  Matrix truth = orthonormal(5, 7);
  Matrix est(5, 3);
  est.col(0) = -truth.col(2);
  est.col(1) = truth.col(0);
  est.col(2) = truth.col(4);
  MatchReport r = match_and_score(est, truth);
  CHECK(*r.permutation[0] == 2);
  CHECK(r.signs[0] == -1);
  CHECK(r.signs[1] == 1);
  CHECK(r.frobenius_error < 1e-12);
  std::vector<Index> missed = r.missed;
  std::sort(missed.begin(), missed.end());
  CHECK(missed == std::vector<Index>{1, 3});
  CHECK(r.recovered(0.99) == 3);
  CHECK_THROWS_AS(match_and_score(Matrix::Identity(4, 2), truth), InvalidArgument);
}

TEST_CASE("multiview learning from noiseless samples") {
  // d >> k keeps the components incoherent: near fixed points and farther apart than nu/2.
  MixtureModel m = MixtureModel::random_exchangeable(400, 20, 0.0, 4);
  SampleBatch b = sample_multiview(m, 200, 1);
  LearnConfig cfg;
  cfg.power.max_iters = 30;
  DecompositionResult exact = learn_multiview(b, TensorSource::exact_tensor, cfg, &m);
  MatchReport r = match_and_score(exact.estimates, m.factor(0));
  std::vector<bool> seen(20, false);
  for (Index h : *b.labels) seen[h] = true;
  Index covered = std::count(seen.begin(), seen.end(), true);
  CHECK(r.recovered(0.95) == covered);
  DecompositionResult implicit = learn_multiview(b, TensorSource::implicit_samples, cfg);
  CHECK(match_and_score(implicit.estimates, m.factor(0)).recovered(0.95) >= covered * 9 / 10);
  CHECK_THROWS_AS(learn_multiview(b, TensorSource::exact_tensor, cfg), InvalidArgument);
  CHECK(sample_inits(b, 7).cols() == 7);
  CHECK(parse_tensor_source(to_string(TensorSource::implicit_samples)) == TensorSource::implicit_samples);
}
