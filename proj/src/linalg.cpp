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

#include "soda/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "soda/errors.hpp"

namespace soda {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kMaxJacobiSweeps = 100;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_finite(const Matrix& m, const char* op) {
  if (!m.all_finite()) throw NumericError(std::string(op) + ": input has non-finite entries");
}

std::size_t checked_mul(std::size_t a, std::size_t b) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) {
    throw ShapeError("kron: result dimensions overflow");
  }
  return a * b;
}

// Modified Gram-Schmidt over the rows of `w` with one re-orthogonalization
// pass. Rows whose residual falls below `tol` get a zero coefficient and are
// replaced by a completion vector orthogonal to all previous rows.
TriangularDecomposition gram_schmidt_rows(const Matrix& w) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const double tol = 1e-13 * frobenius_norm(w);
  Matrix l(m, m);
  Matrix q(m, n);
  std::vector<double> v(n);

  auto project_out = [&](std::size_t upto, std::span<double> vec, Matrix* coeffs, std::size_t row) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < upto; ++j) {
        const auto qj = q.row(j);
        double c = 0.0;
        for (std::size_t k = 0; k < n; ++k) c += qj[k] * vec[k];
        for (std::size_t k = 0; k < n; ++k) vec[k] -= c * qj[k];
        if (coeffs) (*coeffs)(row, j) += c;
      }
    }
  };
  auto norm = [](std::span<const double> vec) {
    double s = 0.0;
    for (double x : vec) s += x * x;
    return std::sqrt(s);
  };

  for (std::size_t i = 0; i < m; ++i) {
    const auto wi = w.row(i);
    std::copy(wi.begin(), wi.end(), v.begin());
    project_out(i, v, &l, i);
    double nv = norm(v);
    if (nv > tol && nv > 0.0) {
      l(i, i) = nv;
      for (std::size_t k = 0; k < n; ++k) q(i, k) = v[k] / nv;
      continue;
    }
    // Rank-deficient row: pick the standard basis vector with the largest
    // residual against the rows so far.
    l(i, i) = 0.0;
    double best = -1.0;
    std::vector<double> best_vec(n);
    std::vector<double> cand(n);
    for (std::size_t e = 0; e < n; ++e) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[e] = 1.0;
      project_out(i, cand, nullptr, i);
      const double nc = norm(cand);
      if (nc > best) {
        best = nc;
        best_vec = cand;
      }
    }
    for (std::size_t k = 0; k < n; ++k) q(i, k) = best_vec[k] / best;
  }
  return {std::move(l), std::move(q)};
}

struct JacobiResult {
  Matrix u;  // m x n, orthonormal columns
  std::vector<double> sigma;
  Matrix v;  // n x n
};

// One-sided Jacobi on the columns of a (m >= n).
JacobiResult one_sided_jacobi(const Matrix& w) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  Matrix a = w;
  Matrix v = Matrix::identity(n);
  const double norm_w = frobenius_norm(w);
  const double rot_tol = kEps * static_cast<double>(m);
  // Columns this small are numerically zero; rotating them only churns rounding noise.
  const double negligible = (kEps * norm_w) * (kEps * norm_w);

  bool converged = norm_w == 0.0;
  double off = 0.0;
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    bool rotated = false;
    off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        off += gamma * gamma;
        if (gamma == 0.0 || std::abs(gamma) <= rot_tol * std::sqrt(alpha * beta)) continue;
        if (alpha <= negligible || beta <= negligible) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    // Every pair orthogonal to relative precision; implies off-diagonal mass
    // below 1e-14 * ‖W‖_F^2 for the sizes used here.
    converged = !rotated;
  }
  if (!converged) {
    std::ostringstream os;
    os << "svd: one-sided Jacobi did not converge in " << kMaxJacobiSweeps
       << " sweeps; off-diagonal mass " << std::sqrt(off);
    throw NumericError(os.str());
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double smax = n ? sigma[order[0]] : 0.0;
  const double rank_tol = smax * static_cast<double>(std::max(m, n)) * kEps;
  JacobiResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  std::vector<std::size_t> deficient;
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    out.sigma[jj] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) out.v(i, jj) = v(i, j);
    if (sigma[j] > rank_tol && sigma[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, jj) = a(i, j) / sigma[j];
    } else {
      deficient.push_back(jj);
    }
  }
  if (!deficient.empty()) {
    // Complete the missing left singular vectors against the valid ones.
    const std::size_t good = n - deficient.size();
    Matrix basis(m, good == 0 ? 1 : good);
    if (good > 0) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < good; ++j) basis(i, j) = out.u(i, j);
    }
    Matrix full = good > 0 ? complete_orthonormal_basis(basis) : Matrix::identity(m);
    for (std::size_t d = 0; d < deficient.size(); ++d)
      for (std::size_t i = 0; i < m; ++i) out.u(i, deficient[d]) = full(i, good + d);
  }
  return out;
}

}  // namespace

Matrix SpectralDecomposition::reconstruct() const {
  Matrix us = u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= sigma[j];
  return matmul(us, vt);
}

Matrix TriangularDecomposition::reconstruct() const { return matmul(l, q); }

SkewSymmetric::SkewSymmetric(std::size_t dim) : dim_(dim), lower_(dim * (dim - 1) / 2, 0.0) {
  if (dim == 0) throw ShapeError("skew-symmetric dimension must be positive");
}

SkewSymmetric::SkewSymmetric(std::size_t dim, std::vector<double> lower)
    : dim_(dim), lower_(std::move(lower)) {
  if (dim == 0) throw ShapeError("skew-symmetric dimension must be positive");
  if (lower_.size() != dim * (dim - 1) / 2) {
    throw ShapeError("skew-symmetric lower triangle needs " + std::to_string(dim * (dim - 1) / 2) +
                     " entries, got " + std::to_string(lower_.size()));
  }
}

SkewSymmetric SkewSymmetric::from_lower(const Matrix& m) {
  if (!m.is_square()) throw ShapeError("skew-symmetric source must be square, got " + shape_str(m));
  SkewSymmetric s(m.rows());
  for (std::size_t i = 1; i < m.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) s.lower_[index(i, j)] = m(i, j);
  return s;
}

Matrix SkewSymmetric::materialize() const {
  Matrix m(dim_, dim_);
  for (std::size_t i = 1; i < dim_; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      m(i, j) = lower_[index(i, j)];
      m(j, i) = -lower_[index(i, j)];
    }
  }
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_str(a) + " * " + shape_str(b) + ")");
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ (" + shape_str(a) + ", " + shape_str(b) + ")");
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto ak = a.row(k);
    const auto bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ (" + shape_str(a) + ", " + shape_str(b) + ")");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("hadamard: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  const std::size_t rows = checked_mul(a.rows(), b.rows());
  const std::size_t cols = checked_mul(a.cols(), b.cols());
  checked_mul(rows, cols);
  Matrix c(rows, cols);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q)
          c(i * b.rows() + p, j * b.cols() + q) = aij * b(p, q);
    }
  return c;
}

Matrix kron_all(std::span<const Matrix> factors) {
  if (factors.empty()) throw ShapeError("kron_all: empty factor list");
  Matrix out = factors[0];
  for (std::size_t i = 1; i < factors.size(); ++i) out = kron(out, factors[i]);
  return out;
}

Matrix block_diagonal(std::span<const Matrix> blocks) {
  if (blocks.empty()) throw ShapeError("block_diagonal: empty block list");
  std::size_t rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  Matrix out(rows, cols);
  std::size_t r0 = 0, c0 = 0;
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < b.rows(); ++i)
      for (std::size_t j = 0; j < b.cols(); ++j) out(r0 + i, c0 + j) = b(i, j);
    r0 += b.rows();
    c0 += b.cols();
  }
  return out;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double dot(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("dot: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

double orthogonality_defect(const Matrix& a) {
  Matrix g = matmul_tn(a, a);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return frobenius_norm(g);
}

namespace {

struct LuFactors {
  Matrix lu;
  std::vector<std::size_t> perm;
  int sign = 1;
  bool singular = false;
};

LuFactors lu_decompose(const Matrix& a) {
  if (!a.is_square()) throw ShapeError("LU requires a square matrix, got " + shape_str(a));
  const std::size_t n = a.rows();
  LuFactors f{a, std::vector<std::size_t>(n), 1, false};
  std::iota(f.perm.begin(), f.perm.end(), 0);
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  const double tiny = scale * kEps * static_cast<double>(n);
  Matrix& m = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
    if (std::abs(m(piv, k)) <= tiny || m(piv, k) == 0.0) {
      f.singular = true;
      return f;
    }
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
      std::swap(f.perm[k], f.perm[piv]);
      f.sign = -f.sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double factor = m(i, k) / m(k, k);
      m(i, k) = factor;
      for (std::size_t j = k + 1; j < n; ++j) m(i, j) -= factor * m(k, j);
    }
  }
  return f;
}

}  // namespace

Matrix solve(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("solve: right-hand side " + shape_str(b) + " does not match " + shape_str(a));
  }
  const LuFactors f = lu_decompose(a);
  if (f.singular) throw NumericError("solve: matrix is singular to working precision");
  const std::size_t n = a.rows();
  Matrix x(n, b.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) x(i, j) = b(f.perm[i], j);
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= f.lu(i, k) * x(k, c);
      x(i, c) = s;
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= f.lu(ii, k) * x(k, c);
      x(ii, c) = s / f.lu(ii, ii);
    }
  }
  return x;
}

double determinant(const Matrix& a) {
  const LuFactors f = lu_decompose(a);
  if (f.singular) return 0.0;
  double d = f.sign;
  for (std::size_t i = 0; i < a.rows(); ++i) d *= f.lu(i, i);
  return d;
}

SpectralDecomposition svd(const Matrix& w) {
  require_finite(w, "svd");
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  SpectralDecomposition out;
  if (m >= n) {
    JacobiResult j = one_sided_jacobi(w);
    out.u = std::move(j.u);
    out.sigma = std::move(j.sigma);
    out.vt = j.v.transpose();
  } else {
    JacobiResult j = one_sided_jacobi(w.transpose());
    out.u = std::move(j.v);
    out.sigma = std::move(j.sigma);
    out.vt = j.u.transpose();
  }
  // Largest-magnitude entry of each u column is made positive.
  const std::size_t k = out.sigma.size();
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::abs(out.u(i, j)) > std::abs(out.u(best, j))) best = i;
    if (out.u(best, j) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, j) = -out.u(i, j);
      for (std::size_t c = 0; c < n; ++c) out.vt(j, c) = -out.vt(j, c);
    }
  }
  return out;
}

TriangularDecomposition lq(const Matrix& w) {
  require_finite(w, "lq");
  if (w.rows() > w.cols()) {
    throw ShapeError("lq requires rows <= cols, got " + shape_str(w));
  }
  return gram_schmidt_rows(w);
}

Matrix qr_orthonormal(const Matrix& a) {
  require_finite(a, "qr");
  if (a.rows() < a.cols()) throw ShapeError("qr requires rows >= cols, got " + shape_str(a));
  return gram_schmidt_rows(a.transpose()).q.transpose();
}

Matrix complete_orthonormal_basis(const Matrix& basis) {
  const std::size_t n = basis.rows();
  const std::size_t p = basis.cols();
  if (p > n) throw ShapeError("complete_orthonormal_basis: more columns than rows");
  if (p == n) return basis;
  // Rows of `ext` are the basis columns, followed by n - p zero rows that
  // Gram-Schmidt completes.
  Matrix ext(n, n);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t i = 0; i < n; ++i) ext(j, i) = basis(i, j);
  TriangularDecomposition g = gram_schmidt_rows(ext);
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) out(i, j) = basis(i, j);
    for (std::size_t j = p; j < n; ++j) out(i, j) = g.q(j, i);
  }
  return out;
}

Matrix cayley(const SkewSymmetric& s) {
  const Matrix sm = s.materialize();
  const Matrix eye = Matrix::identity(s.dim());
  // (I + S) and (I − S)^{-1} commute, so R = (I − S)^{-1}(I + S).
  return solve(eye - sm, eye + sm);
}

}  // namespace soda
