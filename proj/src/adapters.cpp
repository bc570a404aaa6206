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

#include "soda/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "soda/errors.hpp"

namespace soda {

namespace {

std::string dims(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + dims(rows, cols) + ", got " +
                     dims(m.rows(), m.cols()));
  }
}

std::size_t product(std::span<const std::size_t> xs) {
  std::size_t p = 1;
  for (auto x : xs) p *= x;
  return p;
}

double softplus_inverse(double y) {
  // Values of y at or below the smallest normal double map to the far negative tail.
  y = std::max(y, 1e-300);
  return y + std::log(-std::expm1(-y));
}

// s_i = constraint(σ_i + δ_i), or L's shifted diagonal for the QR variant.
std::vector<double> shifted_values(const FrozenBase& base, const AdapterState& st) {
  if (st.method == Method::kSodaQr) {
    const Matrix& l = base.triangular()->l;
    std::vector<double> s(l.rows());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = l(i, i) + st.params.delta[i];
    return s;
  }
  const auto& sigma = base.spectral().sigma;
  std::vector<double> s(sigma.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = apply_constraint(st.constraint, sigma[i] + st.params.delta[i]);
  return s;
}

// u · diag(s) · p[:, :k]ᵀ
Matrix scaled_outer(const Matrix& u, std::span<const double> s, const Matrix& p) {
  Matrix us = u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= s[j];
  Matrix out(u.rows(), p.rows());
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < p.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < s.size(); ++l) acc += us(i, l) * p(j, l);
      out(i, j) = acc;
    }
  return out;
}

void validate(const FrozenBase& base, const AdapterState& st) {
  const std::size_t m = base.rows(), n = base.cols(), k = base.rank_dim();
  const auto& p = st.params;
  switch (st.method) {
    case Method::kLora:
      expect_shape(p.b, m, st.rank, "LoRA B");
      expect_shape(p.a, st.rank, n, "LoRA A");
      break;
    case Method::kOft:
    case Method::kOftShared: {
      const std::size_t want = st.method == Method::kOft ? st.rank : 1;
      if (st.rank == 0 || n % st.rank != 0 || p.blocks.size() != want) {
        throw ConfigError("OFT state does not match input dimension " + std::to_string(n));
      }
      for (const auto& b : p.blocks) expect_shape(b, n / st.rank, n / st.rank, "OFT block");
      break;
    }
    default:
      break;
  }
  if (uses_kronecker(st.method)) {
    if (st.factor_sizes.size() != p.factors.size() || product(st.factor_sizes) != n) {
      throw ConfigError("Kronecker factor sizes do not multiply to input dimension " +
                        std::to_string(n));
    }
    for (std::size_t i = 0; i < p.factors.size(); ++i)
      expect_shape(p.factors[i], st.factor_sizes[i], st.factor_sizes[i], "Kronecker factor");
  }
  if (st.method == Method::kSodaQr && !base.triangular()) {
    throw ConfigError("SODA_QR requires rows <= cols, got " + dims(m, n));
  }
  if (uses_spectral_shift(st.method)) {
    const std::size_t want = st.method == Method::kSodaQr ? m : k;
    if (p.delta.size() != want) {
      throw ShapeError("spectral shift length " + std::to_string(p.delta.size()) +
                       " does not match " + std::to_string(want));
    }
  }
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kLora: return "LORA";
    case Method::kOft: return "OFT";
    case Method::kOftShared: return "OFT_SHARED";
    case Method::kKoft: return "KOFT";
    case Method::kSvdiff: return "SVDIFF";
    case Method::kSodaSvd: return "SODA_SVD";
    case Method::kSodaQr: return "SODA_QR";
  }
  return "?";
}

std::string_view to_string(Constraint c) {
  switch (c) {
    case Constraint::kRelu: return "RELU";
    case Constraint::kSoftplus: return "SOFTPLUS";
    case Constraint::kNone: return "NONE";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  for (Method m : kAllMethods)
    if (to_string(m) == up) return m;
  throw ConfigError("unknown method '" + std::string(s) +
                    "' (expected LORA, OFT, OFT_SHARED, KOFT, SVDIFF, SODA_SVD, SODA_QR)");
}

Constraint parse_constraint(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  for (Constraint c : {Constraint::kRelu, Constraint::kSoftplus, Constraint::kNone})
    if (to_string(c) == up) return c;
  throw ConfigError("unknown constraint '" + std::string(s) + "' (expected RELU, SOFTPLUS, NONE)");
}

bool uses_kronecker(Method m) {
  return m == Method::kKoft || m == Method::kSodaSvd || m == Method::kSodaQr;
}

bool uses_spectral_shift(Method m) {
  return m == Method::kSvdiff || m == Method::kSodaSvd || m == Method::kSodaQr;
}

bool has_orthogonal_factors(Method m) {
  return uses_kronecker(m) || m == Method::kOft || m == Method::kOftShared;
}

double apply_constraint(Constraint c, double x) {
  switch (c) {
    case Constraint::kRelu: return x > 0.0 ? x : 0.0;
    case Constraint::kSoftplus: return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    case Constraint::kNone: return x;
  }
  return x;
}

double constraint_derivative(Constraint c, double x) {
  switch (c) {
    // Subgradient at zero is 0.
    case Constraint::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Constraint::kSoftplus: {
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    }
    case Constraint::kNone: return 1.0;
  }
  return 1.0;
}

FrozenBase::FrozenBase(Matrix w0) : w0_(std::move(w0)) {
  if (w0_.empty()) throw ShapeError("frozen base weight is empty");
  spectral_ = svd(w0_);
  v_full_ = complete_orthonormal_basis(spectral_.vt.transpose());
  if (w0_.rows() <= w0_.cols()) triangular_ = lq(w0_);
}

std::size_t AdapterParams::scalar_count() const {
  std::size_t c = b.size() + a.size() + delta.size();
  for (const auto& m : blocks) c += m.size();
  for (const auto& m : factors) c += m.size();
  return c;
}

std::vector<std::size_t> choose_kron_factorization(std::size_t n, std::size_t r) {
  if (n == 0 || r == 0) throw ConfigError("Kronecker factorization needs n >= 1 and r >= 1");
  if (r == 1) return {n};

  std::vector<std::size_t> best, cur;
  // Depth-first over nonincreasing factor sequences with product n.
  std::function<void(std::size_t, std::size_t)> search = [&](std::size_t rest, std::size_t cap) {
    if (cur.size() + 1 == r) {
      if (rest < 2 || rest > cap) return;
      cur.push_back(rest);
      bool better = best.empty();
      if (!better) {
        // Compare max/min ratios exactly: cur[0]/cur.back() vs best[0]/best.back().
        const std::size_t lhs = cur.front() * best.back();
        const std::size_t rhs = best.front() * cur.back();
        better = lhs < rhs || (lhs == rhs && cur < best);
      }
      if (better) best = cur;
      cur.pop_back();
      return;
    }
    for (std::size_t f = std::min(cap, rest); f >= 2; --f) {
      if (rest % f != 0) continue;
      cur.push_back(f);
      search(rest / f, f);
      cur.pop_back();
    }
  };
  search(n, n);
  if (best.empty()) {
    throw ConfigError("cannot split n=" + std::to_string(n) + " into " + std::to_string(r) +
                      " Kronecker factors greater than 1; choose a different r");
  }
  return best;
}

AdapterState init_adapter(const FrozenBase& base, Method method, std::size_t rank,
                          Constraint constraint, std::uint64_t seed) {
  if (rank == 0) throw ConfigError("rank must be at least 1");
  const std::size_t m = base.rows(), n = base.cols(), k = base.rank_dim();
  AdapterState st;
  st.method = method;
  st.constraint = constraint;
  st.rank = rank;
  auto& p = st.params;

  switch (method) {
    case Method::kLora: {
      p.b = Matrix(m, rank);
      p.a = Matrix(rank, n);
      std::mt19937_64 rng(seed);
      const double bound = 1.0 / std::sqrt(static_cast<double>(n));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& x : p.a.data()) x = dist(rng);
      break;
    }
    case Method::kOft:
    case Method::kOftShared:
      if (n % rank != 0) {
        throw ConfigError("OFT block count " + std::to_string(rank) + " does not divide n=" +
                          std::to_string(n));
      }
      p.blocks.assign(method == Method::kOft ? rank : 1, Matrix::identity(n / rank));
      break;
    default:
      break;
  }
  if (uses_kronecker(method)) {
    st.factor_sizes = choose_kron_factorization(n, rank);
    for (auto s : st.factor_sizes) p.factors.push_back(Matrix::identity(s));
  }
  if (method == Method::kSodaQr) {
    if (!base.triangular()) throw ConfigError("SODA_QR requires rows <= cols, got " + dims(m, n));
    p.delta.assign(m, 0.0);
  } else if (uses_spectral_shift(method)) {
    p.delta.assign(k, 0.0);
    if (constraint == Constraint::kSoftplus) {
      // softplus(σ + δ) = σ at initialization.
      const auto& sigma = base.spectral().sigma;
      for (std::size_t i = 0; i < k; ++i) p.delta[i] = softplus_inverse(sigma[i]) - sigma[i];
    }
  }
  return st;
}

Matrix kronecker_rotation(const AdapterState& state) {
  if (state.params.factors.empty()) throw ConfigError("adapter has no Kronecker factors");
  return kron_all(state.params.factors);
}

std::vector<double> effective_spectrum(const FrozenBase& base, const AdapterState& state) {
  if (!uses_spectral_shift(state.method)) {
    throw ConfigError(std::string(to_string(state.method)) + " has no spectral shifts");
  }
  validate(base, state);
  return shifted_values(base, state);
}

Matrix effective_weight(const FrozenBase& base, const AdapterState& st) {
  validate(base, st);
  const auto& p = st.params;
  switch (st.method) {
    case Method::kLora:
      return base.w0() + matmul(p.b, p.a);
    case Method::kOft:
      return matmul(base.w0(), block_diagonal(p.blocks));
    case Method::kOftShared:
      return matmul(base.w0(), kron(Matrix::identity(st.rank), p.blocks[0]));
    case Method::kKoft:
      return matmul(base.w0(), kron_all(p.factors));
    case Method::kSvdiff: {
      const auto s = shifted_values(base, st);
      return scaled_outer(base.spectral().u, s, base.spectral().vt.transpose());
    }
    case Method::kSodaSvd: {
      const auto s = shifted_values(base, st);
      return scaled_outer(base.spectral().u, s, matmul(base.v_full(), kron_all(p.factors)));
    }
    case Method::kSodaQr: {
      const auto& tri = *base.triangular();
      Matrix l = tri.l;
      for (std::size_t i = 0; i < l.rows(); ++i) l(i, i) += p.delta[i];
      return matmul(l, matmul(tri.q, kron_all(p.factors)));
    }
  }
  throw ConfigError("unknown adapter method");
}

Matrix forward(const FrozenBase& base, const AdapterState& st, const Matrix& x) {
  if (x.rows() != base.cols()) {
    throw ShapeError("forward: input has " + std::to_string(x.rows()) + " rows, layer expects " +
                     std::to_string(base.cols()));
  }
  if (st.method == Method::kLora) {
    validate(base, st);
    return matmul(base.w0(), x) + matmul(st.params.b, matmul(st.params.a, x));
  }
  return matmul(effective_weight(base, st), x);
}

ParameterGradients backward(const FrozenBase& base, const AdapterState& st, const Matrix& x,
                            const Matrix& dh) {
  if (x.rows() != base.cols() || dh.rows() != base.rows() || x.cols() != dh.cols()) {
    throw ShapeError("backward: x is " + dims(x.rows(), x.cols()) + " and dh is " +
                     dims(dh.rows(), dh.cols()) + " for a " + dims(base.rows(), base.cols()) +
                     " layer");
  }
  return backward_from_weight_grad(base, st, matmul_nt(dh, x));
}

ParameterGradients backward_from_weight_grad(const FrozenBase& base, const AdapterState& st,
                                             const Matrix& g) {
  validate(base, st);
  expect_shape(g, base.rows(), base.cols(), "weight gradient");
  const auto& p = st.params;
  ParameterGradients out;
  switch (st.method) {
    case Method::kLora:
      out.b = matmul_nt(g, p.a);
      out.a = matmul_tn(p.b, g);
      break;
    case Method::kOft:
    case Method::kOftShared: {
      const Matrix dd = matmul_tn(base.w0(), g);
      const std::size_t bs = base.cols() / st.rank;
      const std::size_t nblocks = st.method == Method::kOft ? st.rank : 1;
      out.blocks.assign(nblocks, Matrix(bs, bs));
      for (std::size_t blk = 0; blk < st.rank; ++blk) {
        Matrix& target = out.blocks[st.method == Method::kOft ? blk : 0];
        for (std::size_t i = 0; i < bs; ++i)
          for (std::size_t j = 0; j < bs; ++j) target(i, j) += dd(blk * bs + i, blk * bs + j);
      }
      break;
    }
    case Method::kKoft:
      out.factors = kron_factor_gradients(p.factors, matmul_tn(base.w0(), g));
      break;
    case Method::kSvdiff:
    case Method::kSodaSvd: {
      const auto& u = base.spectral().u;
      const auto& sigma = base.spectral().sigma;
      const std::size_t k = sigma.size();
      // Right basis: V0 for SVDIFF, V0·K (first k columns used) for SODA.
      const Matrix right = st.method == Method::kSvdiff ? base.spectral().vt.transpose()
                                                        : matmul(base.v_full(), kron_all(p.factors));
      const Matrix gp = matmul(g, right);  // m x (k or n)
      out.delta.resize(k);
      for (std::size_t i = 0; i < k; ++i) {
        double acc = 0.0;
        for (std::size_t r = 0; r < u.rows(); ++r) acc += u(r, i) * gp(r, i);
        out.delta[i] = acc * constraint_derivative(st.constraint, sigma[i] + p.delta[i]);
      }
      if (st.method == Method::kSodaSvd) {
        const auto s = shifted_values(base, st);
        const std::size_t n = base.cols();
        // ∂l/∂P for P = V_full·K: the first k columns are Gᵀ·U·diag(s).
        const Matrix gtu = matmul_tn(g, u);  // n x k
        Matrix dp(n, n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) dp(i, j) = gtu(i, j) * s[j];
        out.factors = kron_factor_gradients(p.factors, matmul_tn(base.v_full(), dp));
      }
      break;
    }
    case Method::kSodaQr: {
      const auto& tri = *base.triangular();
      const Matrix qk = matmul(tri.q, kron_all(p.factors));
      out.delta.resize(tri.l.rows());
      for (std::size_t i = 0; i < out.delta.size(); ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < qk.cols(); ++c) acc += g(i, c) * qk(i, c);
        out.delta[i] = acc;
      }
      Matrix l = tri.l;
      for (std::size_t i = 0; i < l.rows(); ++i) l(i, i) += p.delta[i];
      out.factors = kron_factor_gradients(p.factors, matmul_tn(matmul(l, tri.q), g));
      break;
    }
  }
  return out;
}

std::vector<Matrix> kron_factor_gradients(std::span<const Matrix> factors, const Matrix& grad_k) {
  if (factors.empty()) throw ShapeError("kron_factor_gradients: no factors");
  std::vector<std::size_t> sizes;
  for (const auto& f : factors) {
    if (!f.is_square()) throw ShapeError("kron_factor_gradients: factors must be square");
    sizes.push_back(f.rows());
  }
  const std::size_t total = product(sizes);
  expect_shape(grad_k, total, total, "Kronecker gradient");

  std::vector<Matrix> out;
  out.reserve(factors.size());
  const Matrix one(1, 1, 1.0);
  for (std::size_t j = 0; j < factors.size(); ++j) {
    const Matrix left = j == 0 ? one : kron_all(factors.subspan(0, j));
    const Matrix right = j + 1 == factors.size() ? one : kron_all(factors.subspan(j + 1));
    const std::size_t nl = left.rows(), nj = sizes[j], nr = right.rows();
    Matrix d(nj, nj);
    for (std::size_t al = 0; al < nl; ++al)
      for (std::size_t ga = 0; ga < nl; ++ga) {
        const double lv = left(al, ga);
        for (std::size_t pp = 0; pp < nj; ++pp)
          for (std::size_t qq = 0; qq < nj; ++qq) {
            const std::size_t row0 = (al * nj + pp) * nr;
            const std::size_t col0 = (ga * nj + qq) * nr;
            double acc = 0.0;
            for (std::size_t be = 0; be < nr; ++be)
              for (std::size_t de = 0; de < nr; ++de)
                acc += grad_k(row0 + be, col0 + de) * right(be, de);
            d(pp, qq) += lv * acc;
          }
      }
    out.push_back(std::move(d));
  }
  return out;
}

std::size_t param_count(Method method, std::size_t m, std::size_t n, std::size_t r) {
  if (m == 0 || n == 0 || r == 0) throw ConfigError("param_count needs positive m, n, r");
  auto kron_count = [&] {
    std::size_t c = 0;
    for (auto s : choose_kron_factorization(n, r)) c += s * s;
    return c;
  };
  switch (method) {
    case Method::kLora:
      return (m + n) * r;
    case Method::kOft:
    case Method::kOftShared: {
      if (n % r != 0) {
        throw ConfigError("OFT needs r to divide n (n=" + std::to_string(n) +
                          ", r=" + std::to_string(r) + ")");
      }
      const std::size_t bs = n / r;
      return method == Method::kOft ? r * bs * bs : bs * bs;
    }
    case Method::kKoft:
      return kron_count();
    case Method::kSvdiff:
      return std::min(m, n);
    case Method::kSodaSvd:
      return std::min(m, n) + kron_count();
    case Method::kSodaQr:
      if (m > n) throw ConfigError("SODA_QR requires m <= n");
      return m + kron_count();
  }
  throw ConfigError("unknown adapter method");
}

Matrix residual(const FrozenBase& base, const AdapterState& state) {
  if (state.method == Method::kLora) {
    (void)effective_weight(base, state);
    return matmul(state.params.b, state.params.a);
  }
  return effective_weight(base, state) - base.w0();
}

Matrix merge(const Matrix& dw1, const Matrix& dw2) {
  expect_shape(dw2, dw1.rows(), dw1.cols(), "merge");
  return dw1 + dw2;
}

SpectralProjection spectral_projection_delta(const Matrix& u, const Matrix& v, const Matrix& dw) {
  if (u.rows() != dw.rows() || v.rows() != dw.cols()) {
    throw ShapeError("spectral_projection_delta: bases " + dims(u.rows(), u.cols()) + " and " +
                     dims(v.rows(), v.cols()) + " do not match update " +
                     dims(dw.rows(), dw.cols()));
  }
  Matrix ds = matmul(matmul_tn(u, dw), v);
  for (std::size_t i = 0; i < ds.rows(); ++i)
    for (std::size_t j = 0; j < ds.cols(); ++j)
      if (i != j) ds(i, j) = 0.0;
  const double norm = frobenius_norm(matmul_nt(matmul(u, ds), v));
  return {std::move(ds), norm};
}

double max_orthogonality_defect(const AdapterState& state) {
  double worst = 0.0;
  for (const auto& b : state.params.blocks) worst = std::max(worst, orthogonality_defect(b));
  for (const auto& f : state.params.factors) worst = std::max(worst, orthogonality_defect(f));
  return worst;
}

}  // namespace soda
