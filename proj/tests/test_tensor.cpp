#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "tpi/errors.hpp"
#include "tpi/rng.hpp"
#include "tpi/tensor.hpp"

using namespace tpi;

namespace {

Vector gaussian(Index d, CounterRng& rng) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

// Entry (i,j,l) of sum_r w_r a_r (x) b_r (x) c_r by direct summation.
double entry(const Matrix& a, const Matrix& b, const Matrix& c, const Vector& w, Index i, Index j,
             Index l) {
  double s = 0;
  for (Index r = 0; r < w.size(); ++r) s += w(r) * a(i, r) * b(j, r) * c(l, r);
  return s;
}

// T(I,v,w) etc. with a triple loop over an entry callback.
template <typename F>
Vector brute_contract(Index d, Mode free, const Vector& v, const Vector& w, F&& at) {
  Vector out = Vector::Zero(d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j)
      for (Index l = 0; l < d; ++l) {
        double t = at(i, j, l);
        switch (free) {
          case Mode::first: out(i) += t * v(j) * w(l); break;
          case Mode::second: out(j) += t * v(i) * w(l); break;
          case Mode::third: out(l) += t * v(i) * w(j); break;
        }
      }
  return out;
}

bool bit_equal(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i)
    if (std::memcmp(&a(i), &b(i), sizeof(double)) != 0) return false;
  return true;
}

}  // namespace

TEST_CASE("factored contraction matches a triple loop in every mode") {
  CounterRng rng(11);
  const Index d = 7, k = 5;
  Matrix a = random_components(d, k, 1), b = random_components(d, k, 2),
         c = random_components(d, k, 3);
  Vector w = gaussian(k, rng);
  FactoredTensor3 sym(a, w);
  FactoredTensor3 asym(a, b, c, w);
  Vector v = gaussian(d, rng), u = gaussian(d, rng);
  for (Mode m : {Mode::first, Mode::second, Mode::third}) {
    Vector ref_s = brute_contract(d, m, v, u, [&](Index i, Index j, Index l) {
      return entry(a, a, a, w, i, j, l);
    });
    Vector ref_a = brute_contract(d, m, v, u, [&](Index i, Index j, Index l) {
      return entry(a, b, c, w, i, j, l);
    });
    CHECK((sym.contract(m, v, u) - ref_s).norm() <= 1e-12 * (1 + ref_s.norm()));
    CHECK((asym.contract(m, v, u) - ref_a).norm() <= 1e-12 * (1 + ref_a.norm()));
  }
  CHECK(sym.symmetric());
  CHECK_FALSE(asym.symmetric());
}

TEST_CASE("densify agrees with the factored operator") {
  Matrix a = random_components(6, 9, 4);
  Vector w = Vector::LinSpaced(9, 0.5, 2.0);
  FactoredTensor3 t(a, w);
  DenseTensor3 dense = densify(t);
  CHECK(dense.symmetry_defect() < 1e-14);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j)
      for (Index l = 0; l < 6; ++l) CHECK(dense.at(i, j, l) == doctest::Approx(entry(a, a, a, w, i, j, l)).epsilon(1e-12));
  CounterRng rng(3);
  Vector v = gaussian(6, rng), u = gaussian(6, rng);
  CHECK((dense.contract(Mode::first, v, u) - t.contract(Mode::first, v, u)).norm() < 1e-12);
  CHECK(contract_scalar(dense, v, v, u) == doctest::Approx(contract_scalar(t, v, v, u)).epsilon(1e-12));
}

TEST_CASE("orthonormal components are eigenvectors") {
  Matrix q = Eigen::HouseholderQR<Matrix>(random_components(5, 5, 8, ComponentDistribution::gaussian))
                 .householderQ();
  Vector w(5);
  w << 1, 1.25, 1.5, 1.75, 2;
  FactoredTensor3 t(q, w);
  for (Index j = 0; j < 5; ++j)
    CHECK((contract_1(t, q.col(j), q.col(j)) - w(j) * q.col(j)).norm() < 1e-12);
}

TEST_CASE("sign flips are exact") {
  CounterRng rng(21);
  FactoredTensor3 t(random_components(8, 12, 5), Vector::Ones(12));
  DenseTensor3 dense = random_symmetric_tensor(8, 6);
  Vector v = gaussian(8, rng), u = gaussian(8, rng);
  for (const Tensor3* op : {static_cast<const Tensor3*>(&t), static_cast<const Tensor3*>(&dense)}) {
    Vector base = op->contract(Mode::first, v, u);
    CHECK(bit_equal(op->contract(Mode::first, -v, -u), base));
    Vector neg = -base;
    CHECK(bit_equal(op->contract(Mode::first, -v, u), neg));
  }
}

TEST_CASE("random symmetric tensor is permutation invariant") {
  DenseTensor3 e = random_symmetric_tensor(5, 12);
  CHECK(e.symmetric());
  CHECK(e.symmetry_defect() == 0.0);
  CHECK(e.at(1, 2, 3) == e.at(3, 1, 2));
  CHECK(e.at(0, 0, 4) == e.at(4, 0, 0));
}

TEST_CASE("dense constructor rejects bad inputs") {
  CHECK_THROWS_AS(DenseTensor3(3, std::vector<double>(26, 0.0), false), InvalidArgument);
  std::vector<double> entries(27, 0.0);
  entries[1] = 1.0;  // (0,0,1) without its permutations
  CHECK_THROWS_AS(DenseTensor3(3, entries, true), InvalidArgument);
  CHECK_THROWS_AS(DenseTensor3(kMaxDenseDim + 1), ResourceError);
  CHECK_THROWS_AS(densify(FactoredTensor3(random_components(300, 2, 1), Vector::Ones(2))),
                  ResourceError);
}

TEST_CASE("factored constructor enforces its invariants") {
  Matrix a = random_components(4, 3, 2);
  CHECK_THROWS_AS(FactoredTensor3(2.0 * a, Vector::Ones(3)), InvalidArgument);
  Vector w = Vector::Ones(3);
  w(1) = 0.0;
  CHECK_THROWS_AS(FactoredTensor3(a, w), InvalidArgument);
  CHECK_THROWS_AS(FactoredTensor3(a, Vector::Ones(2)), InvalidArgument);
  FactoredTensor3 t(a, Vector::Ones(3));
  CHECK_THROWS_AS(t.contract(Mode::first, Vector::Ones(5), Vector::Ones(4)), InvalidArgument);
}

TEST_CASE("absorb_norms moves column norms into cubed weights") {
  Matrix raw(2, 2);
  raw << 2, 0, 0, 3;
  Vector w(2);
  w << 1, -1;
  FactoredTensor3 t = FactoredTensor3::absorb_norms(raw, w);
  CHECK(t.weights()(0) == doctest::Approx(8.0));
  CHECK(t.weights()(1) == doctest::Approx(-27.0));
  CHECK(t.weight_ratio() == doctest::Approx(27.0 / 8.0));
}

TEST_CASE("spectral norm estimate against a d=3 sphere grid") {
  CounterRng rng(17);
  Matrix a = random_components(3, 4, 9);
  Vector w(4);
  w << 1.0, -0.7, 0.4, 1.3;
  FactoredTensor3 t(a, w);
  double grid = 0;
  const int nt = 600, np = 1200;
  for (int i = 0; i <= nt; ++i) {
    double th = std::numbers::pi * i / nt;
    for (int j = 0; j < np; ++j) {
      double ph = 2 * std::numbers::pi * j / np;
      Vector x(3);
      x << std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th);
      grid = std::max(grid, std::abs(contract_scalar(t, x, x, x)));
    }
  }
  double est = spectral_norm_estimate(t, {16, 100, 0});
  CHECK(est <= grid * (1 + 1e-3));
  CHECK(est >= grid * (1 - 1e-3));
  double fewer = spectral_norm_estimate(t, {4, 100, 0});
  CHECK(fewer <= est);
}

TEST_CASE("scale_noise_to hits the requested estimate") {
  DenseTensor3 e = random_symmetric_tensor(10, 3);
  SpectralNormOptions opt{4, 20, 5};
  DenseTensor3 s = scale_noise_to(e, 0.25, opt);
  CHECK(spectral_norm_estimate(s, opt) == doctest::Approx(0.25).epsilon(1e-9));
  CHECK_THROWS_AS(scale_noise_to(DenseTensor3(4), 1.0), InvalidArgument);
  PerturbedTensor p = make_perturbed(FactoredTensor3(random_components(10, 3, 1), Vector::Ones(3)), s, opt);
  CHECK(p.noise_spectral_norm() == doctest::Approx(0.25).epsilon(1e-9));
  Vector x = random_components(10, 1, 2).col(0);
  CHECK((p.contract(Mode::first, x, x) - p.signal().contract(Mode::first, x, x) -
         s.contract(Mode::first, x, x)).norm() < 1e-14);
}

TEST_CASE("random_components is deterministic and unit norm") {
  Matrix a = random_components(20, 30, 77), b = random_components(20, 30, 77);
  CHECK(a == b);
  CHECK((a.colwise().norm().array() - 1).abs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(normalize_columns(Matrix::Zero(3, 2)), InvalidArgument);
}
