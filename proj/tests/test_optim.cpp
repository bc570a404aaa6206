// Copyright 2026 The soda-peft Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cmath>
#include <random>

#include "soda/errors.hpp"
#include "soda/optim.hpp"
#include "test_util.hpp"

using namespace soda;
using soda::testing::max_abs_diff;
using soda::testing::random_matrix;
using soda::testing::random_orthogonal;

TEST_SUITE("stiefel_opt") {

TEST_CASE("tangent projection") {
  std::mt19937_64 rng(1);
  const Matrix v = qr_orthonormal(random_matrix(6, 3, rng));
  const Matrix g = random_matrix(6, 3, rng);
  const Matrix t = stiefel_tangent_projection(v, g);
  // Tangent vectors satisfy vᵀt + tᵀv = 0.
  const Matrix vt = matmul_tn(v, t);
  CHECK(frobenius_norm(vt + vt.transpose()) <= 1e-12);
  // Projection is idempotent.
  CHECK(max_abs_diff(stiefel_tangent_projection(v, t), t) <= 1e-12);
}

TEST_CASE("stiefel_step fixed points") {
  StiefelOptimizerState st;
  const Matrix v = Matrix::identity(3);
  CHECK(stiefel_step(v, Matrix(3, 3), st) == v);

  StiefelOptimizerState st2;
  st2.lr = 0.5;
  const Matrix sym{{2, 1}, {1, -3}};
  const Matrix out = stiefel_step(Matrix::identity(2), sym, st2);
  CHECK(max_abs_diff(out, Matrix::identity(2)) <= 1e-12);
}

TEST_CASE("stiefel_step rejects bad input") {
  StiefelOptimizerState st;
  CHECK_THROWS_AS(stiefel_step(Matrix::identity(3), Matrix(3, 2), st), ShapeError);
  Matrix g(2, 2);
  g(0, 1) = std::nan("");
  CHECK_THROWS_AS(stiefel_step(Matrix::identity(2), g, st), NumericError);
}

TEST_CASE("random-gradient trajectory stays on the manifold") {
  std::mt19937_64 rng(7);
  Matrix v = random_orthogonal(8, rng);
  StiefelOptimizerState st;
  st.lr = 0.1;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    v = stiefel_step(v, random_matrix(8, 8, rng), st);
    worst = std::max(worst, orthogonality_defect(v));
  }
  CHECK(worst <= 1e-8);
  CHECK(st.step_count == 1000);

  Matrix tall = qr_orthonormal(random_matrix(9, 4, rng));
  StiefelOptimizerState st3;
  for (int i = 0; i < 200; ++i) tall = stiefel_step(tall, random_matrix(9, 4, rng), st3);
  CHECK(orthogonality_defect(tall) <= 1e-8);
}

TEST_CASE("stiefel momentum reduces a Procrustes objective") {
  std::mt19937_64 rng(12);
  Matrix target = random_orthogonal(6, rng);
  if (determinant(target) < 0)
    for (std::size_t i = 0; i < 6; ++i) target(i, 0) = -target(i, 0);
  Matrix v = Matrix::identity(6);
  auto objective = [&](const Matrix& x) {
    const double d = frobenius_norm(x - target);
    return d * d;
  };
  const double start = objective(v);
  StiefelOptimizerState st;
  st.lr = 0.1;
  for (int i = 0; i < 200; ++i) v = stiefel_step(v, 2.0 * (v - target), st);
  CHECK(objective(v) <= start / 100.0);
  CHECK(orthogonality_defect(v) <= 1e-8);
}

TEST_CASE("euclidean_step arithmetic") {
  EuclideanOptimizerState st;
  st.lr = 0.1;
  st.beta = 0.0;
  CHECK(euclidean_step(Matrix{{1.0}}, Matrix{{2.0}}, st)(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

  EuclideanOptimizerState z;
  CHECK(euclidean_step(Matrix{{1.5, 2}}, Matrix(1, 2), z) == (Matrix{{1.5, 2}}));

  // m1 = g1, p1 = p0 − lr·g1; m2 = β·g1 + g2, p2 = p1 − lr·m2.
  EuclideanOptimizerState h;
  h.lr = 0.05;
  h.beta = 0.9;
  const double p0 = 1.0, g1 = 0.4, g2 = -0.2;
  Matrix p = euclidean_step(Matrix{{p0}}, Matrix{{g1}}, h);
  p = euclidean_step(p, Matrix{{g2}}, h);
  const double p1 = p0 - 0.05 * g1;
  const double p2 = p1 - 0.05 * (0.9 * g1 + g2);
  CHECK(p(0, 0) == doctest::Approx(p2).epsilon(1e-15));

  EuclideanOptimizerState wd;
  wd.lr = 0.1;
  wd.beta = 0.0;
  wd.weight_decay = 0.5;
  CHECK(euclidean_step(Matrix{{2.0}}, Matrix{{0.0}}, wd)(0, 0) == doctest::Approx(1.9));
}

TEST_CASE("cayley parameter basics") {
  CayleyParameter cp(3);
  CHECK(cp.rotation() == Matrix::identity(3));
  const CayleyParameter same = cayley_step(cp, Matrix(3, 3), 0.1);
  CHECK(same.rotation() == cp.rotation());
  CHECK(std::vector<double>(same.generator().lower().begin(), same.generator().lower().end()) ==
        std::vector<double>(3, 0.0));
  CHECK_THROWS_AS(cp.pullback(Matrix(2, 2)), ShapeError);
}

TEST_CASE("cayley pullback matches central differences") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd(0.0, 0.7);
  for (std::size_t dim : {2u, 3u, 5u}) {
    for (int t = 0; t < 10; ++t) {
      SkewSymmetric s(dim);
      for (double& v : s.lower()) v = nd(rng);
      const CayleyParameter cp(s);
      const Matrix g = random_matrix(dim, dim, rng);
      const SkewSymmetric analytic = cp.pullback(g);
      double worst = 0.0, scale = 0.0;
      for (std::size_t k = 0; k < s.lower().size(); ++k) {
        const double h = 1e-6;
        SkewSymmetric plus = s, minus = s;
        plus.lower()[k] += h;
        minus.lower()[k] -= h;
        const double fd = (dot(g, cayley(plus)) - dot(g, cayley(minus))) / (2 * h);
        worst = std::max(worst, std::abs(fd - analytic.lower()[k]));
        scale = std::max(scale, std::abs(fd));
      }
      CHECK(worst <= 1e-6 * std::max(scale, 1.0));
    }
  }
}

TEST_CASE("cayley steps keep det one") {
  std::mt19937_64 rng(22);
  CayleyParameter cp(4);
  for (int i = 0; i < 300; ++i) {
    cp = cayley_step(cp, random_matrix(4, 4, rng), 0.05);
    CHECK(determinant(cp.rotation()) == doctest::Approx(1.0).epsilon(1e-10));
  }
  CHECK(orthogonality_defect(cp.rotation()) <= 1e-10);
}

TEST_CASE("cayley and stiefel agree to first order at the same lr") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 10; ++t) {
    const Matrix g = random_matrix(4, 4, rng);
    double worst = 0.0;
    for (double lr : {1e-2, 1e-3, 1e-4}) {
      StiefelOptimizerState st;
      st.lr = lr;
      st.beta = 0.0;
      const Matrix vs = stiefel_step(Matrix::identity(4), g, st);
      const CayleyParameter cp = cayley_step(CayleyParameter(4), g, lr);
      worst = std::max(worst, frobenius_norm(vs - cp.rotation()) / (lr * lr));
      CHECK(frobenius_norm(vs - Matrix::identity(4)) > 0.1 * lr);
    }
    // the difference shrinks like lr², so the ratio stays bounded
    CHECK(worst <= 10.0 * frobenius_norm(g) * frobenius_norm(g));
  }
}

}  // TEST_SUITE
