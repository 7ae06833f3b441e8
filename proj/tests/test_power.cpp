#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "tpi/errors.hpp"
#include "tpi/power.hpp"

using namespace tpi;

namespace {

Matrix orthonormal(Index d, std::uint64_t seed) {
  return Eigen::HouseholderQR<Matrix>(random_components(d, d, seed, ComponentDistribution::gaussian))
      .householderQ();
}

Vector unit(Vector v) { return v / v.norm(); }

}  // namespace

TEST_CASE("one power step by hand") {
  // T = 2 e1^3 + e2^3, x = (e1 + e2)/sqrt2: T(I,x,x) = (1, 1/2), norm sqrt(5)/2.
  Matrix a = Matrix::Identity(2, 2);
  Vector w(2);
  w << 2, 1;
  FactoredTensor3 t(a, w);
  Vector x = unit(Vector::Ones(2));
  PowerStep s = power_step(t, x);
  CHECK(s.unnormalized_norm == doctest::Approx(std::sqrt(5.0) / 2));
  CHECK(s.x(0) == doctest::Approx(2 / std::sqrt(5.0)));
  CHECK(s.x(1) == doctest::Approx(1 / std::sqrt(5.0)));
}

TEST_CASE("power_step preconditions") {
  FactoredTensor3 t(Matrix::Identity(3, 3), Vector::Ones(3));
  CHECK_THROWS_AS(power_step(t, Vector::Ones(3)), InvalidArgument);
  CHECK_THROWS_AS(power_step(t, Vector::Ones(2) / std::sqrt(2.0)), InvalidArgument);
  // x orthogonal to every component.
  FactoredTensor3 flat(Matrix::Identity(3, 2), Vector::Ones(2));
  CHECK_THROWS_AS(power_step(flat, Vector::Unit(3, 2)), DegenerateIterate);
}

TEST_CASE("default iteration budget") {
  CHECK(PowerConfig::default_iterations(2) == 14);
  CHECK(PowerConfig::default_iterations(4) == 14);
  CHECK(PowerConfig::default_iterations(16) == 18);
  CHECK(PowerConfig::default_iterations(100) == 21);
  PowerConfig bad;
  bad.max_iters = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad.max_iters = 3;
  bad.convergence_gamma = 1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("orthogonal tensor converges to the nearest component") {
  Matrix q = orthonormal(8, 3);
  FactoredTensor3 t(q, Vector::LinSpaced(8, 1.0, 2.0));
  Vector x0 = unit(q.col(2) + 0.2 * q.col(5) - 0.1 * q.col(0));
  PowerConfig cfg;
  cfg.max_iters = 50;
  cfg.track_target = 2;
  cfg.convergence_gamma = 1e-12;
  IterationTrace tr = run_power(t, x0, cfg, &t);
  REQUIRE(tr.final_correlation);
  CHECK(*tr.final_correlation > 1 - 1e-12);
  CHECK(tr.fixed_point_residual < 1e-5);
  CHECK(tr.steps.size() == static_cast<std::size_t>(tr.iterations) + 1);
  CHECK(tr.steps.front().iteration == 0);
  CHECK_FALSE(tr.steps.front().unnormalized_norm);
}

TEST_CASE("early stop at 1 - gamma") {
  Matrix q = orthonormal(6, 1);
  FactoredTensor3 t(q, Vector::Ones(6));
  PowerConfig cfg;
  cfg.max_iters = 30;
  cfg.convergence_gamma = 0.05;
  IterationTrace tr = run_power(t, unit(q.col(0) + 0.5 * q.col(1)), cfg, &t);
  CHECK(tr.stop_reason == StopReason::target_reached);
  CHECK(*tr.final_correlation >= 0.95);
  CHECK(tr.iterations < 30);
  // Without a ground truth the run ends at a fixed point instead.
  IterationTrace free_run = run_power(t, unit(q.col(0) + 0.5 * q.col(1)), cfg);
  CHECK(free_run.stop_reason == StopReason::fixed_point);
  CHECK_FALSE(free_run.final_correlation);
}

TEST_CASE("trace levels") {
  Matrix q = orthonormal(5, 2);
  FactoredTensor3 t(q, Vector::Ones(5));
  PowerConfig cfg;
  cfg.max_iters = 3;
  cfg.trace_level = TraceLevel::none;
  Vector x0 = unit(Vector::LinSpaced(5, 1, 2));
  CHECK(run_power(t, x0, cfg).steps.empty());
  cfg.trace_level = TraceLevel::full;
  IterationTrace full = run_power(t, x0, cfg, &t);
  REQUIRE(!full.steps.empty());
  const auto& s = full.steps[1];
  CHECK(s.x.size() == 5);
  CHECK((s.y - q.transpose() * s.x).norm() < 1e-14);
  REQUIRE(s.w.size() == 4);
  CHECK(s.w(0) == doctest::Approx(s.y(1) * s.y(1)));
  CHECK(parse_trace_level("full") == TraceLevel::full);
  CHECK_THROWS_AS(parse_trace_level("loud"), InvalidArgument);
}

TEST_CASE("asymmetric alternating update recovers all three modes") {
  const Index d = 6;
  Matrix a = orthonormal(d, 4), b = orthonormal(d, 5), c = orthonormal(d, 6);
  FactoredTensor3 t(a, b, c, Vector::LinSpaced(d, 1.0, 1.5));
  PowerConfig cfg;
  cfg.max_iters = 40;
  cfg.convergence_gamma = 1e-10;
  auto unit_near = [&](const Matrix& m) { return unit(m.col(0) + 0.3 * m.col(1) + 0.2 * m.col(3)); };
  AsymmetricTrace tr = run_power_asymmetric(t, unit_near(a), unit_near(b), unit_near(c), cfg, &t);
  for (const auto& mode : tr.modes) {
    REQUIRE(mode.final_correlation);
    CHECK(*mode.final_correlation > 1 - 1e-10);
  }
}

TEST_CASE("noisy run with zero noise has zero shadow gap") {
  FactoredTensor3 t(random_components(12, 20, 3), Vector::Ones(20));
  PerturbedTensor p(t, DenseTensor3(12, true), 0.0);
  PowerConfig cfg;
  cfg.max_iters = 8;
  Vector x0 = unit(t.components().col(0) + 0.3 * random_components(12, 1, 9).col(0));
  IterationTrace noisy = run_power_with_shadow(p, x0, cfg, &t);
  IterationTrace clean = run_power(t, x0, cfg, &t);
  REQUIRE(noisy.steps.size() == clean.steps.size());
  for (std::size_t s = 0; s < noisy.steps.size(); ++s) {
    CHECK(*noisy.steps[s].noise_component_norm <= 1e-14);
    CHECK(*noisy.steps[s].target_correlation == doctest::Approx(*clean.steps[s].target_correlation).epsilon(1e-12));
  }
}

TEST_CASE("shadow gap grows with the perturbation") {
  FactoredTensor3 t(random_components(15, 20, 3), Vector::Ones(20));
  Vector x0 = unit(t.components().col(0) + 0.2 * random_components(15, 1, 9).col(0));
  PowerConfig cfg;
  cfg.max_iters = 5;
  double last = 0;
  for (double level : {1e-4, 1e-3, 1e-2}) {
    PerturbedTensor p = make_perturbed(t, scale_noise_to(random_symmetric_tensor(15, 2), level));
    IterationTrace tr = run_power_with_shadow(p, x0, cfg, &t);
    double worst = 0;
    for (const auto& s : tr.steps) worst = std::max(worst, *s.noise_component_norm);
    CHECK(worst > last);
    CHECK(worst < 50 * level);
    last = worst;
  }
}

TEST_CASE("quadratic progress check on synthetic traces") {
  // d=100, k=400: scale d/sqrt(k) = 5, ceiling 2.5.
  auto make = [](std::initializer_list<double> corr) {
    IterationTrace tr;
    int i = 0;
    for (double c : corr) {
      IterationStep s;
      s.iteration = i++;
      s.target_correlation = c;
      tr.steps.push_back(s);
    }
    return tr;
  };
  // r: 1.5 -> 1.0 -> 4.5 passes (1.0 >= 0.4 * 2.25).
  CHECK(quadratic_progress_holds(make({0.3, 0.2, 0.9}), 100, 400));
  // r: 2.0 -> 1.5 fails (needs >= 1.6).
  CHECK_FALSE(quadratic_progress_holds(make({0.4, 0.3}), 100, 400));
  // r above the ceiling is never checked.
  CHECK(quadratic_progress_holds(make({0.6, 0.1}), 100, 400));
  auto r = rescaled_correlations(make({0.2}), 100, 400);
  CHECK(r[0] == doctest::Approx(1.0));
  IterationTrace untracked;
  untracked.steps.resize(2);
  CHECK_THROWS_AS(rescaled_correlations(untracked, 10, 10), InvalidArgument);
}

TEST_CASE("noise growth constant") {
  IterationTrace tr;
  tr.steps.resize(3);
  tr.steps[0].noise_component_norm = 0.0;
  tr.steps[1].noise_component_norm = 0.1;
  tr.steps[2].noise_component_norm = 0.2;
  // step s is scaled by d^{beta 2^s}.
  const double d = 7;
  const double c1 = 0.1 / (std::pow(d, 0.5 * 2) * 0.01 * std::log(d));
  const double c2 = 0.2 / (std::pow(d, 0.5 * 4) * 0.01 * std::log(d));
  CHECK(fit_noise_growth_constant(tr, 7, 0.5, 0.01) == doctest::Approx(std::max(c1, c2)));
}

TEST_CASE("trace writers") {
  IterationTrace tr;
  IterationStep s0;
  s0.iteration = 0;
  s0.target_correlation = 0.5;
  IterationStep s1;
  s1.iteration = 1;
  s1.target_correlation = 0.75;
  s1.unnormalized_norm = 2.0;
  s1.noise_component_norm = 0.125;
  tr.steps = {s0, s1};
  std::ostringstream csv, jsonl;
  write_trace_csv(csv, tr);
  write_trace_jsonl(jsonl, tr);
  CHECK(csv.str() == "iteration,correlation,unnorm_norm,noise_norm\n0,0.5,,\n1,0.75,2,0.125\n");
  std::string j = jsonl.str();
  CHECK(std::count(j.begin(), j.end(), '\n') == 2);
  CHECK(j.find("\"noise_norm\":null") != std::string::npos);
}
