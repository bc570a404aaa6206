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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soda/linalg.hpp"
#include "soda/matrix.hpp"

namespace soda {

enum class Method { kLora, kOft, kOftShared, kKoft, kSvdiff, kSodaSvd, kSodaQr };
enum class Constraint { kRelu, kSoftplus, kNone };

inline constexpr Method kAllMethods[] = {Method::kLora,   Method::kOft,     Method::kOftShared,
                                         Method::kKoft,   Method::kSvdiff,  Method::kSodaSvd,
                                         Method::kSodaQr};

std::string_view to_string(Method m);
std::string_view to_string(Constraint c);
Method parse_method(std::string_view s);
Constraint parse_constraint(std::string_view s);

bool uses_kronecker(Method m);
bool uses_spectral_shift(Method m);
/// True for methods whose trainables include orthogonal matrices.
bool has_orthogonal_factors(Method m);

double apply_constraint(Constraint c, double x);
double constraint_derivative(Constraint c, double x);

/// Frozen pretrained weight with its decompositions computed once.
///
/// The SVD is always available. `v_full` extends the right singular vectors to
/// an n x n orthogonal matrix so a rotation of size n can act on it when m < n.
/// The LQ factorization exists only when m <= n.
class FrozenBase {
 public:
  explicit FrozenBase(Matrix w0);

  const Matrix& w0() const noexcept { return w0_; }
  std::size_t rows() const noexcept { return w0_.rows(); }
  std::size_t cols() const noexcept { return w0_.cols(); }
  std::size_t rank_dim() const noexcept { return spectral_.sigma.size(); }

  const SpectralDecomposition& spectral() const noexcept { return spectral_; }
  const Matrix& v_full() const noexcept { return v_full_; }
  const std::optional<TriangularDecomposition>& triangular() const noexcept { return triangular_; }

 private:
  Matrix w0_;
  SpectralDecomposition spectral_;
  Matrix v_full_;
  std::optional<TriangularDecomposition> triangular_;
};

/// Trainable tensors of an adapter. Unused members stay empty. The same layout
/// carries parameter gradients.
struct AdapterParams {
  Matrix b;                     // LoRA, m x r
  Matrix a;                     // LoRA, r x n
  std::vector<Matrix> blocks;   // OFT blocks (one block when shared)
  std::vector<Matrix> factors;  // Kronecker rotation factors
  std::vector<double> delta;    // spectral / diagonal shifts

  std::size_t scalar_count() const;
};

using ParameterGradients = AdapterParams;

struct AdapterState {
  Method method = Method::kSodaSvd;
  Constraint constraint = Constraint::kRelu;
  std::size_t rank = 1;  // LoRA rank, OFT block count, or Kronecker factor count
  std::vector<std::size_t> factor_sizes;
  AdapterParams params;
};

/// Most-balanced factorization of n into r factors, each > 1 when r > 1,
/// returned in nonincreasing order.
std::vector<std::size_t> choose_kron_factorization(std::size_t n, std::size_t r);

/// Builds the initial state for `method`: zero B, identity rotations, and
/// shifts that leave the effective weight equal to w0. LoRA's A is drawn
/// uniformly from ±1/√n using `seed`.
AdapterState init_adapter(const FrozenBase& base, Method method, std::size_t rank,
                          Constraint constraint = Constraint::kRelu, std::uint64_t seed = 0);

/// Materialized ⊗ of the state's Kronecker factors.
Matrix kronecker_rotation(const AdapterState& state);

/// Singular values (SVD methods) or L diagonal (QR) after shifts and constraint.
std::vector<double> effective_spectrum(const FrozenBase& base, const AdapterState& state);

Matrix effective_weight(const FrozenBase& base, const AdapterState& state);
Matrix forward(const FrozenBase& base, const AdapterState& state, const Matrix& x);
/// Gradients of a loss l given x (n x batch) and dh = ∂l/∂h (m x batch).
ParameterGradients backward(const FrozenBase& base, const AdapterState& state, const Matrix& x,
                            const Matrix& dh);
/// Gradients given the ambient gradient ∂l/∂W directly.
ParameterGradients backward_from_weight_grad(const FrozenBase& base, const AdapterState& state,
                                             const Matrix& grad_w);

/// [∂l/∂R_j] for K = R_1 ⊗ … ⊗ R_r given M = ∂l/∂K.
std::vector<Matrix> kron_factor_gradients(std::span<const Matrix> factors, const Matrix& grad_k);

/// Trainable scalar count. Square layers with evenly divisible sizes follow the
/// closed forms 2nr, n²/r, n²/r², r·n^{2/r}, n + r·n^{2/r}; otherwise the exact
/// count over the chosen block or factor sizes.
std::size_t param_count(Method method, std::size_t m, std::size_t n, std::size_t r);

Matrix residual(const FrozenBase& base, const AdapterState& state);
Matrix merge(const Matrix& dw1, const Matrix& dw2);

struct SpectralProjection {
  Matrix delta_sigma;        // (uᵀ·dw·v) ⊙ I
  double projected_norm;     // ‖u·ΔΣ·vᵀ‖_F
};

SpectralProjection spectral_projection_delta(const Matrix& u, const Matrix& v, const Matrix& dw);

/// Largest orthogonality defect over the state's orthogonal trainables (0 if none).
double max_orthogonality_defect(const AdapterState& state);

}  // namespace soda
