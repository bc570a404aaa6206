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

#include "soda/optim.hpp"

#include <algorithm>
#include <string>

#include "soda/errors.hpp"

namespace soda {

namespace {

constexpr double kReorthogonalizeAbove = 1e-10;
constexpr double kManifoldTolerance = 1e-8;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": gradient shape " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + " does not match parameter " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

bool all_zero(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double x) { return x == 0.0; });
}

}  // namespace

CayleyParameter::CayleyParameter(std::size_t dim)
    : s_(dim), rotation_(Matrix::identity(dim)) {}

CayleyParameter::CayleyParameter(SkewSymmetric s) : s_(std::move(s)), rotation_(cayley(s_)) {}

void CayleyParameter::set_generator(SkewSymmetric s) {
  rotation_ = cayley(s);
  s_ = std::move(s);
}

SkewSymmetric CayleyParameter::pullback(const Matrix& grad_wrt_rotation) const {
  require_same_shape(rotation_, grad_wrt_rotation, "cayley pullback");
  // R = (I − S)^{-1}(I + S)  ⇒  dR = (I − S)^{-1} dS (R + I).
  const std::size_t n = s_.dim();
  const Matrix sm = s_.materialize();
  const Matrix eye = Matrix::identity(n);
  // (I − S)ᵀ = I + S.
  const Matrix at_g = solve(eye + sm, grad_wrt_rotation);
  const Matrix ambient = matmul_nt(at_g, rotation_ + eye);
  SkewSymmetric out(n);
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      out.lower()[SkewSymmetric::index(i, j)] = ambient(i, j) - ambient(j, i);
  return out;
}

Matrix stiefel_tangent_projection(const Matrix& v, const Matrix& g) {
  require_same_shape(v, g, "stiefel projection");
  Matrix vtg = matmul_tn(v, g);
  Matrix sym = vtg + vtg.transpose();
  sym *= 0.5;
  return g - matmul(v, sym);
}

Matrix stiefel_step(const Matrix& v, const Matrix& grad, StiefelOptimizerState& state) {
  require_same_shape(v, grad, "stiefel_step");
  if (v.rows() < v.cols()) throw ShapeError("stiefel_step: parameter must have rows >= cols");
  if (orthogonality_defect(v) > kManifoldTolerance) {
    throw NumericError("stiefel_step: parameter is off the Stiefel manifold");
  }
  if (state.momentum.empty()) state.momentum = Matrix(v.rows(), v.cols());
  require_same_shape(v, state.momentum, "stiefel_step momentum");

  Matrix rgrad = stiefel_tangent_projection(v, grad);
  state.momentum *= state.beta;
  state.momentum += rgrad;
  ++state.step_count;
  if (all_zero(state.momentum)) return v;

  Matrix next = qr_orthonormal(v - state.lr * state.momentum);
  if (orthogonality_defect(next) > kReorthogonalizeAbove) next = qr_orthonormal(next);
  if (!next.all_finite() || orthogonality_defect(next) > kManifoldTolerance) {
    throw NumericError("stiefel_step: retraction failed to return to the manifold");
  }
  state.momentum = stiefel_tangent_projection(next, state.momentum);
  return next;
}

Matrix euclidean_step(const Matrix& p, const Matrix& grad, EuclideanOptimizerState& state) {
  require_same_shape(p, grad, "euclidean_step");
  if (state.momentum.empty()) state.momentum = Matrix(p.rows(), p.cols());
  require_same_shape(p, state.momentum, "euclidean_step momentum");
  state.momentum *= state.beta;
  state.momentum += grad;
  ++state.step_count;
  Matrix out = p;
  if (state.weight_decay != 0.0) out *= 1.0 - state.lr * state.weight_decay;
  out -= state.lr * state.momentum;
  return out;
}

CayleyParameter cayley_step(const CayleyParameter& cp, const Matrix& grad_wrt_rotation, double lr) {
  const SkewSymmetric g = cp.pullback(grad_wrt_rotation);
  if (std::all_of(g.lower().begin(), g.lower().end(), [](double x) { return x == 0.0; })) {
    return cp;
  }
  // At S = 0 the Frobenius metric on R pulls back to 8·I on the lower-triangle
  // coordinates; dividing by it makes a step of size lr move R as far as a
  // Stiefel step of the same lr.
  constexpr double kMetric = 8.0;
  SkewSymmetric next = cp.generator();
  for (std::size_t i = 0; i < next.lower().size(); ++i) next.lower()[i] -= (lr / kMetric) * g.lower()[i];
  CayleyParameter out = cp;
  out.set_generator(std::move(next));
  return out;
}

}  // namespace soda
