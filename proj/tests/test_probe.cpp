#include <cmath>

#include "doctest.h"
#include "tpi/errors.hpp"
#include "tpi/probe.hpp"

using namespace tpi;

namespace {

Vector gaussian(Index d, CounterRng& rng, double scale = 1.0) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = scale * rng.normal();
  return v;
}

IterationTrace full_trace(const FactoredTensor3& t, const Vector& x0, int iters) {
  PowerConfig cfg;
  cfg.max_iters = iters;
  cfg.convergence_gamma = 1e-9;
  cfg.trace_level = TraceLevel::full;
  return run_power(t, x0, cfg, &t);
}

}  // namespace

TEST_CASE("star norm examples") {
  Matrix a = random_components(20, 6, 3);
  CHECK(star_norm(a, a.col(2)) >= 1 - 1e-12);
  Matrix basis = Matrix::Identity(5, 5);
  CHECK(star_norm(basis.leftCols(3), basis.col(4)) == 0.0);
  CHECK_THROWS_AS(star_norm(a, Vector::Ones(3)), InvalidArgument);
}

TEST_CASE("star norm of a random direction stays near the gaussian max") {
  const Index d = 500, k = 1000;
  Matrix a = random_components(d, k, 11);
  CounterRng rng(4);
  for (int s = 0; s < 5; ++s) {
    Vector u = gaussian(d, rng);
    CHECK(star_norm(a, u) < 5 * u.norm() * std::sqrt(2 * std::log(double(k)) / d));
  }
}

TEST_CASE("star norm duality bounds") {
  CounterRng rng(8);
  for (std::uint64_t s = 0; s < 50; ++s) {
    Matrix a = random_components(7, 11, s);
    Vector u = gaussian(7, rng);
    const double star = star_norm(a, u), l2 = (a.transpose() * u).norm();
    CHECK(star <= l2 + 1e-15);
    CHECK(l2 <= std::sqrt(11.0) * star + 1e-15);
  }
}

TEST_CASE("hypothesis monitor basics") {
  const Index d = 40, k = 60;
  Matrix a = random_components(d, k, 5);
  FactoredTensor3 t(a, Vector::Ones(k));
  Vector x0 = (a.col(0) + 0.5 * random_components(d, 1, 6).col(0)).normalized();
  IterationTrace tr = full_trace(t, x0, 6);
  HypothesisReport rep = monitor_hypotheses(tr, a, 0);
  REQUIRE(rep.records.size() == tr.steps.size());
  CHECK(rep.records[0].t == 1);
  CHECK(rep.records[0].proj_x_norm == 1.0);
  CHECK_FALSE(rep.records[0].u_norm);
  CHECK(rep.projection_defect < 1e-10);
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& r = rep.records[i];
    CHECK(r.proj_x_norm >= 0);
    CHECK(r.proj_x_norm <= 1 + 1e-12);
    CHECK(r.progress == doctest::Approx(std::abs(a.col(0).dot(tr.steps[i].x))));
    if (i > 0) {
      CHECK(*r.proj_w_norm >= 0);
      CHECK(*r.proj_w_inf <= *r.proj_w_norm + 1e-15);
      CHECK(*r.u_norm >= 0);
      CHECK(*r.v_norm >= 0);
    }
  }
  CHECK(rep.envelope.delta <= 1.0);
  HypothesisEnvelope merged = merge_envelopes({rep, rep});
  CHECK(merged.delta == rep.envelope.delta);
  CHECK(merged.u_upper == rep.envelope.u_upper);
}

TEST_CASE("second iterate projection by hand") {
  // x(2) projected off x(1): proj_x_norm = sqrt(1 - <x1,x2>^2).
  const Index d = 10;
  Matrix a = random_components(d, 12, 1);
  FactoredTensor3 t(a, Vector::Ones(12));
  IterationTrace tr = full_trace(t, random_components(d, 1, 2).col(0), 2);
  HypothesisReport rep = monitor_hypotheses(tr, a, 0);
  const double c = tr.steps[0].x.dot(tr.steps[1].x);
  CHECK(rep.records[1].proj_x_norm == doctest::Approx(std::sqrt(1 - c * c)).epsilon(1e-10));
  const Vector& w = tr.steps[0].w;
  CHECK(*rep.records[1].proj_w_norm == doctest::Approx(w.norm()).epsilon(1e-12));
}

TEST_CASE("monitor needs a full trace") {
  Matrix a = random_components(6, 4, 1);
  FactoredTensor3 t(a, Vector::Ones(4));
  PowerConfig cfg;
  cfg.max_iters = 3;
  IterationTrace tr = run_power(t, a.col(1), cfg, &t);
  CHECK_THROWS_AS(monitor_hypotheses(tr, a, 0), InvalidArgument);
  IterationTrace full = full_trace(t, a.col(1), 3);
  CHECK_THROWS_AS(monitor_hypotheses(full, random_components(7, 4, 1), 0), InvalidArgument);
}

TEST_CASE("axis-aligned column constraint") {
  const Index d = 4, k = 5;
  Vector u(d);
  u << 1, -2, 0.5, 3;
  ConditionedGaussian g(d, k, 0.5);
  g.add_column_constraint(Vector::Unit(k, 0), u);
  CHECK(g.mean().col(0) == u);
  CHECK(g.mean().rightCols(k - 1).isZero());
  CounterRng rng(3);
  for (int s = 0; s < 5; ++s) {
    Matrix draw = g.sample(rng);
    CHECK((draw.col(0) - u).norm() < 1e-14);
    CHECK(draw.rightCols(k - 1).norm() > 0);
  }
  ConditioningCheck c = check_conditioning_lemma(d, k, 0.5, 2000, 9, u, Vector::Unit(k, 0));
  CHECK(c.pass);
  CHECK(c.orthogonality <= 1e-10);
}

TEST_CASE("zero target leaves a zero mean") {
  CounterRng rng(1);
  Vector v = gaussian(6, rng);
  ConditionedGaussian g(5, 6, 1.0);
  g.add_column_constraint(v, Vector::Zero(5));
  CHECK(g.mean().isZero());
  Matrix draw = g.sample(rng);
  CHECK((draw * v).norm() < 1e-12);
  ConditioningCheck c = check_conditioning_lemma(5, 6, 1.0, 2000, 2, Vector::Zero(5), v);
  CHECK(c.pass);
}

TEST_CASE("chained constraints hold exactly on every draw") {
  CounterRng rng(12);
  const Index d = 8, k = 10;
  Matrix hidden(d, k);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < k; ++j) hidden(i, j) = rng.normal();
  Vector v1 = gaussian(k, rng), x1 = gaussian(d, rng), v2 = gaussian(k, rng);
  ConditionedGaussian g(d, k, 1.0);
  g.add_column_constraint(v1, hidden * v1);
  g.add_row_constraint(x1, hidden.transpose() * x1);
  g.add_column_constraint(v2, hidden * v2);
  CHECK(g.column_basis().cols() == 1);
  CHECK(g.row_basis().cols() == 2);
  for (int s = 0; s < 10; ++s) {
    Matrix draw = g.sample(rng);
    CHECK((draw * v1 - hidden * v1).norm() < 1e-10);
    CHECK((draw.transpose() * x1 - hidden.transpose() * x1).norm() < 1e-10);
    CHECK((draw * v2 - hidden * v2).norm() < 1e-10);
  }
}

TEST_CASE("impossible or redundant constraints are rejected") {
  CounterRng rng(2);
  Vector x = gaussian(4, rng), y = gaussian(6, rng), v = gaussian(6, rng);
  ConditionedGaussian g(4, 6, 1.0);
  g.add_row_constraint(x, y);
  // Consistency needs <x, u> = <y, v>.
  Vector u = x * (y.dot(v) + 1.0) / x.squaredNorm();
  CHECK_THROWS_AS(g.add_column_constraint(v, u), InvalidArgument);
  Vector ok = x * y.dot(v) / x.squaredNorm();
  CHECK_NOTHROW(g.add_column_constraint(v, ok));
  CHECK_THROWS_AS(g.add_column_constraint(v, ok), InvalidArgument);
  CHECK_THROWS_AS(g.add_row_constraint(2.0 * x, 2.0 * y), InvalidArgument);
}

TEST_CASE("conditioning checks at moderate size") {
  ConditioningCheck single = check_conditioning_lemma(10, 12, 0.1, 3000, 4);
  CHECK(single.pass);
  CHECK(single.sample_count == 3000);
  CHECK(single.closed_form_gap <= 1e-10);
  CHECK_THROWS_AS(check_conditioning_lemma(10, 12, 0.1, 99, 4), InvalidArgument);
  ConditioningCheck chain1 = check_iterative_conditioning(10, 12, 1, 3000, 4);
  CHECK(chain1.pass);
  CHECK(chain1.chain_length == 1);
  ConditioningCheck chain3 = check_iterative_conditioning(12, 15, 3, 3000, 5);
  CHECK(chain3.pass);
  CHECK(chain3.variance_ratio > 0.9);
  CHECK(chain3.variance_ratio < 1.1);
  CHECK_THROWS_AS(check_iterative_conditioning(10, 12, 6, 3000, 4), InvalidArgument);
}

TEST_CASE("fresh randomness lower bound") {
  FreshRandomnessReport zero_t = check_fresh_randomness(60, 400, 0, 300, 1);
  CHECK(zero_t.pass);
  for (const auto& c : zero_t.cases) CHECK(c.pass_rate == 1.0);
  FreshRandomnessReport r = check_fresh_randomness(100, 400, 5, 1000, 2);
  CHECK(r.pass);
  bool spiky = false;
  for (const auto& c : r.cases) {
    CHECK(c.pass_rate >= 0.99);
    spiky = spiky || c.kind == FreshVectorKind::spiky;
  }
  CHECK(spiky);
}

TEST_CASE("mixed norm bound") {
  MixedNormReport r = check_mixed_norm_bound(100, 300, 200, 3);
  CHECK(r.pass);
  CHECK(r.fitted_constant <= 10 * std::log(100.0));
  CHECK(r.trial_norms.size() == 200);
  CHECK_THROWS_AS(check_mixed_norm_bound(50, 50, 10, 1), InvalidArgument);
}

TEST_CASE("reports serialize") {
  ConditioningCheck c = check_conditioning_lemma(5, 6, 1.0, 200, 1);
  nlohmann::json j = to_json(c);
  CHECK(j["sample_count"] == 200);
  CHECK(j.contains("checks"));
  CHECK(j["trial_residual_sq"].size() == 200);
}
