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
#include <span>
#include <vector>

#include "soda/matrix.hpp"

namespace soda {

/// Thin SVD w = u * diag(sigma) * vt with k = min(m, n).
///
/// sigma is nonincreasing and nonnegative. Each column of u is sign-normalized
/// so that its entry of largest magnitude (lowest row on ties) is positive.
struct SpectralDecomposition {
  Matrix u;                   // m x k
  std::vector<double> sigma;  // k
  Matrix vt;                  // k x n

  Matrix reconstruct() const;
};

/// w = l * q with l lower triangular (nonnegative diagonal) and q row-orthonormal.
struct TriangularDecomposition {
  Matrix l;  // m x m
  Matrix q;  // m x n

  Matrix reconstruct() const;
};

/// Skew-symmetric matrix stored by its strict lower triangle, row by row:
/// entry (i, j), i > j, lives at index i*(i-1)/2 + j.
class SkewSymmetric {
 public:
  explicit SkewSymmetric(std::size_t dim);
  SkewSymmetric(std::size_t dim, std::vector<double> lower);

  /// Keeps the strict lower triangle of `m`; the rest is ignored.
  static SkewSymmetric from_lower(const Matrix& m);

  std::size_t dim() const noexcept { return dim_; }
  std::span<double> lower() noexcept { return lower_; }
  std::span<const double> lower() const noexcept { return lower_; }
  static std::size_t index(std::size_t i, std::size_t j) noexcept { return i * (i - 1) / 2 + j; }

  Matrix materialize() const;

 private:
  std::size_t dim_;
  std::vector<double> lower_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ * b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * bᵀ without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix kron(const Matrix& a, const Matrix& b);
/// Left-to-right Kronecker product of a non-empty factor list.
Matrix kron_all(std::span<const Matrix> factors);
/// Direct sum diag(blocks...).
Matrix block_diagonal(std::span<const Matrix> blocks);

double frobenius_norm(const Matrix& a);
double dot(const Matrix& a, const Matrix& b);
/// ‖aᵀa − I‖_F; requires rows >= cols.
double orthogonality_defect(const Matrix& a);

/// Solves a * x = b with partial-pivot LU. Throws NumericError if singular.
Matrix solve(const Matrix& a, const Matrix& b);
double determinant(const Matrix& a);

SpectralDecomposition svd(const Matrix& w);
/// Requires rows <= cols.
TriangularDecomposition lq(const Matrix& w);
/// Thin QR with nonnegative diagonal of r; returns the orthonormal factor (rows >= cols).
Matrix qr_orthonormal(const Matrix& a);

/// Extends the orthonormal columns of `basis` (n x p) to an orthonormal n x n
/// matrix whose first p columns equal `basis`.
Matrix complete_orthonormal_basis(const Matrix& basis);

/// (I + S)(I − S)^{-1}.
Matrix cayley(const SkewSymmetric& s);

}  // namespace soda
