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

#pragma once

#include <cstdint>

#include "soda/linalg.hpp"
#include "soda/matrix.hpp"

namespace soda {

/// Momentum state for an orthogonal parameter kept on the Stiefel manifold.
///
/// The momentum buffer lives in the ambient space and is re-projected onto the
/// tangent space at the current point after every step.
struct StiefelOptimizerState {
  Matrix momentum;  // lazily sized to the parameter on first step
  double lr = 1e-2;
  double beta = 0.9;
  std::uint64_t step_count = 0;
};

struct EuclideanOptimizerState {
  Matrix momentum;
  double lr = 1e-2;
  double beta = 0.9;
  double weight_decay = 0.0;  // decoupled: p ← p − lr·wd·p
  std::uint64_t step_count = 0;
};

/// Trainable skew-symmetric generator with its Cayley rotation cached.
class CayleyParameter {
 public:
  explicit CayleyParameter(std::size_t dim);
  explicit CayleyParameter(SkewSymmetric s);

  const SkewSymmetric& generator() const noexcept { return s_; }
  const Matrix& rotation() const noexcept { return rotation_; }

  /// Replaces the generator and recomputes the rotation.
  void set_generator(SkewSymmetric s);

  /// Gradient with respect to the strict lower triangle of S given the
  /// gradient with respect to the materialized rotation.
  SkewSymmetric pullback(const Matrix& grad_wrt_rotation) const;

 private:
  SkewSymmetric s_;
  Matrix rotation_;
};

/// G − V·sym(VᵀG): projection of an ambient gradient onto the tangent space at V.
Matrix stiefel_tangent_projection(const Matrix& v, const Matrix& g);

/// One momentum step on St(n, p) with QR retraction. Returns the new point and
/// updates `state` in place. Zero gradient with zero momentum returns `v` as is.
Matrix stiefel_step(const Matrix& v, const Matrix& grad, StiefelOptimizerState& state);

/// Heavy-ball update: m ← beta·m + grad; p ← p − lr·m.
Matrix euclidean_step(const Matrix& p, const Matrix& grad, EuclideanOptimizerState& state);

/// Gradient step on the Cayley generator, scaled by the metric at S = 0 so it
/// agrees with stiefel_step to first order at the same lr.
CayleyParameter cayley_step(const CayleyParameter& cp, const Matrix& grad_wrt_rotation, double lr);

}  // namespace soda
