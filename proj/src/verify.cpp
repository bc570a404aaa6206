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

#include "soda/verify.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <sstream>

#include "soda/adapters.hpp"
#include "soda/linalg.hpp"
#include "soda/matrix_io.hpp"

namespace soda::verify {

namespace {

// Oracles below are deliberately naive and share no code with the library
// fast paths they check.

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix naive_kron(const Matrix& a, const Matrix& b) {
  const std::size_t mb = b.rows(), nb = b.cols();
  Matrix c(a.rows() * mb, a.cols() * nb);
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (std::size_t s = 0; s < c.cols(); ++s) c(r, s) = a(r / mb, s / nb) * b(r % mb, s % nb);
  return c;
}

double sq_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * a(i, j);
  return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) d = std::max(d, std::abs(a(i, j) - b(i, j)));
  return d;
}

double naive_defect(const Matrix& q) {
  Matrix g = naive_matmul(naive_transpose(q), q);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return std::sqrt(sq_norm(g));
}

double rel_gap(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

Matrix gaussian(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

Matrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  return qr_orthonormal(gaussian(n, n, rng));
}

KronFn kron_or_default(const Options& opt) {
  if (opt.kron) return opt.kron;
  return [](const Matrix& a, const Matrix& b) { return soda::kron(a, b); };
}

std::string fmt(double v) { return format_double(v); }

std::string failing_state(std::uint64_t seed, int trial) {
  return " first failure: seed=" + std::to_string(seed) + " trial=" + std::to_string(trial);
}

CheckResult finish(CheckResult r) {
  if (!std::isfinite(r.measured)) r.measured = std::numeric_limits<double>::max();
  r.passed = r.passed && r.measured <= r.tolerance;
  return r;
}

}  // namespace

Matrix corrupted_kron(const Matrix& a, const Matrix& b) { return soda::kron(a, b.transpose()); }

CheckResult check_kron_orthogonality(int trials, const Options& opt) {
  const auto kr = kron_or_default(opt);
  const std::uint64_t seed = opt.seed + 101;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size_dist(2, 4);
  CheckResult r{"kron_orthogonality", true, 0.0, 1e-7, trials, ""};
  double worst_defect = 0.0, worst_oracle = 0.0;
  int first_bad = -1;
  for (int t = 0; t < trials; ++t) {
    std::vector<Matrix> qs;
    for (int f = 0; f < 3; ++f) qs.push_back(random_orthogonal(size_dist(rng), rng));
    const Matrix k = kr(kr(qs[0], qs[1]), qs[2]);
    const Matrix oracle = naive_kron(naive_kron(qs[0], qs[1]), qs[2]);
    const double defect = naive_defect(k);
    const double mismatch = k.rows() == oracle.rows() && k.cols() == oracle.cols()
                                ? max_abs_diff(k, oracle)
                                : 1.0;
    worst_defect = std::max(worst_defect, defect);
    worst_oracle = std::max(worst_oracle, mismatch);
    if (first_bad < 0 && std::max(defect, mismatch) > r.tolerance) first_bad = t;
  }
  r.measured = std::max(worst_defect, worst_oracle);
  r.detail = "max_defect=" + fmt(worst_defect) + " oracle_mismatch=" + fmt(worst_oracle);
  if (first_bad >= 0) r.detail += failing_state(seed, first_bad);
  return finish(r);
}

CheckResult check_kron_determinant(int trials, const Options& opt) {
  const auto kr = kron_or_default(opt);
  const std::uint64_t seed = opt.seed + 202;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size_dist(2, 4);
  CheckResult r{"kron_determinant", true, 0.0, 1e-10, trials, ""};
  int first_bad = -1;
  for (int t = 0; t < trials; ++t) {
    std::vector<Matrix> qs;
    std::size_t n = 1;
    for (int f = 0; f < 3; ++f) {
      qs.push_back(random_orthogonal(size_dist(rng), rng));
      n *= qs.back().rows();
    }
    const double det_k = determinant(kr(kr(qs[0], qs[1]), qs[2]));
    double oracle = 1.0;
    for (const auto& q : qs) oracle *= std::pow(determinant(q), static_cast<double>(n / q.rows()));
    const double dev = std::max(std::abs(std::abs(det_k) - 1.0), std::abs(det_k - oracle));
    r.measured = std::max(r.measured, dev);
    if (first_bad < 0 && dev > r.tolerance) first_bad = t;
  }
  if (first_bad >= 0) r.detail = failing_state(seed, first_bad);
  return finish(r);
}

CheckResult check_sigma_gradient(int trials, const Options& opt) {
  const std::uint64_t seed = opt.seed + 303;
  std::mt19937_64 rng(seed);
  constexpr std::size_t n = 6;
  constexpr double h = 1e-5;
  CheckResult r{"sigma_gradient", true, 0.0, 1e-5, trials, ""};
  int resampled = 0, first_bad = -1;
  for (int t = 0; t < trials; ++t) {
    Matrix w;
    SpectralDecomposition sd;
    for (;;) {
      w = gaussian(n, n, rng);
      sd = svd(w);
      double gap = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i + 1 < n; ++i) gap = std::min(gap, sd.sigma[i] - sd.sigma[i + 1]);
      if (gap >= 1e-6) break;
      ++resampled;
    }
    const Matrix x = gaussian(n, 1, rng);
    const Matrix dh = gaussian(n, 1, rng);
    const Matrix v = naive_transpose(sd.vt);

    auto loss = [&](const std::vector<double>& sigma) {
      Matrix us = sd.u;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) us(i, j) *= sigma[j];
      const Matrix h_out = naive_matmul(naive_matmul(us, sd.vt), x);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += dh(i, 0) * h_out(i, 0);
      return s;
    };

    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double ud = 0.0, vx = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        ud += sd.u(k, i) * dh(k, 0);
        vx += v(k, i) * x(k, 0);
      }
      const double analytic = ud * vx;
      auto plus = sd.sigma, minus = sd.sigma;
      plus[i] += h;
      minus[i] -= h;
      const double fd = (loss(plus) - loss(minus)) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic - fd));
      scale = std::max(scale, std::abs(fd));
    }
    const double rel = worst / std::max(scale, 1e-300);
    r.measured = std::max(r.measured, rel);
    if (first_bad < 0 && rel > r.tolerance) first_bad = t;
  }
  r.detail = "resampled=" + std::to_string(resampled);
  if (first_bad >= 0) r.detail += failing_state(seed, first_bad);
  return finish(r);
}

CheckResult check_frobenius_inequality(int trials, const Options& opt) {
  const std::uint64_t seed = opt.seed + 404;
  std::mt19937_64 rng(seed);
  constexpr std::size_t n = 8;
  CheckResult r{"frobenius_chain", true, 0.0, 1e-10, trials, ""};
  double worst_ratio = 0.0, ratio_sum = 0.0;
  int first_bad = -1;

  auto links = [&](const Matrix& u, const Matrix& v, const Matrix& dw, double& ratio) {
    const Matrix full = naive_matmul(naive_matmul(naive_transpose(u), dw), v);
    Matrix masked = full;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) masked(i, j) = 0.0;
    const SpectralProjection proj = spectral_projection_delta(u, v, dw);
    const Matrix dw_prime = naive_matmul(naive_matmul(u, proj.delta_sigma), naive_transpose(v));
    const double n_prime = sq_norm(dw_prime);
    const double n_sigma = sq_norm(proj.delta_sigma);
    const double n_masked = sq_norm(masked);
    const double n_full = sq_norm(full);
    const double n_dw = sq_norm(dw);
    ratio = n_prime / n_dw;
    double dev = std::max({rel_gap(n_prime, n_sigma), rel_gap(n_sigma, n_masked),
                           rel_gap(n_full, n_dw),
                           rel_gap(proj.projected_norm * proj.projected_norm, n_prime)});
    if (n_masked > n_full * (1.0 + 1e-12)) dev = std::max(dev, 1.0);
    return dev;
  };

  for (int t = 0; t < trials; ++t) {
    const SpectralDecomposition sd = svd(gaussian(n, n, rng));
    const Matrix v = naive_transpose(sd.vt);
    const Matrix dw = gaussian(n, n, rng);
    double ratio = 0.0;
    const double dev = links(sd.u, v, dw, ratio);
    r.measured = std::max(r.measured, dev);
    worst_ratio = std::max(worst_ratio, ratio);
    ratio_sum += ratio;
    if (first_bad < 0 && (dev > r.tolerance || ratio > 1.0 + 1e-12)) first_bad = t;
  }

  // Equality case: ΔW diagonal in the (U, V) basis. Zero-diagonal case: ratio 0.
  const SpectralDecomposition sd = svd(gaussian(n, n, rng));
  const Matrix v = naive_transpose(sd.vt);
  Matrix d(n, n), z = gaussian(n, n, rng);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    d(i, i) = dist(rng);
    z(i, i) = 0.0;
  }
  double eq_ratio = 0.0, zero_ratio = 0.0;
  r.measured = std::max(r.measured, links(sd.u, v, naive_matmul(naive_matmul(sd.u, d), sd.vt), eq_ratio));
  r.measured = std::max(r.measured, links(sd.u, v, naive_matmul(naive_matmul(sd.u, z), sd.vt), zero_ratio));
  r.measured = std::max({r.measured, std::abs(eq_ratio - 1.0), zero_ratio});

  r.detail = "worst_ratio=" + fmt(worst_ratio) + " mean_ratio=" + fmt(ratio_sum / trials) +
             " equality_ratio=" + fmt(eq_ratio) + " zero_diag_ratio=" + fmt(zero_ratio);
  if (first_bad >= 0) r.detail += failing_state(seed, first_bad);
  return finish(r);
}

CheckResult check_mixed_product(int trials, const Options& opt) {
  const auto kr = kron_or_default(opt);
  const std::uint64_t seed = opt.seed + 505;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  CheckResult r{"mixed_product", true, 0.0, 1e-10, trials, ""};
  int first_bad = -1;
  auto rel = [](const Matrix& got, const Matrix& want) {
    if (got.rows() != want.rows() || got.cols() != want.cols()) return 1.0;
    return std::sqrt(sq_norm(got - want)) / std::max(std::sqrt(sq_norm(want)), 1e-300);
  };
  for (int t = 0; t < trials; ++t) {
    const std::size_t p = dim(rng), q = dim(rng) + 1, s = dim(rng), u = dim(rng) + 1, k1 = dim(rng),
                      k2 = dim(rng);
    const Matrix a = gaussian(p, q, rng), c = gaussian(q, k1, rng);
    const Matrix b = gaussian(s, u, rng), d = gaussian(u, k2, rng);
    const std::size_t er = dim(rng), ec = dim(rng) + 1;
    const Matrix e = gaussian(er, ec, rng);
    double dev = 1.0;
    try {
      const Matrix lhs = matmul(kr(a, b), kr(c, d));
      const Matrix rhs = naive_kron(naive_matmul(a, c), naive_matmul(b, d));
      const Matrix left_assoc = kr(kr(a, b), e);
      const Matrix right_assoc = kr(a, kr(b, e));
      const Matrix oracle3 = naive_kron(naive_kron(a, b), e);
      dev = std::max({rel(lhs, rhs), rel(left_assoc, right_assoc), rel(left_assoc, oracle3)});
    } catch (const std::exception&) {
      // A shape error from the routine under test counts as a failed trial.
    }
    r.measured = std::max(r.measured, dev);
    if (first_bad < 0 && dev > r.tolerance) first_bad = t;
  }
  if (first_bad >= 0) r.detail = failing_state(seed, first_bad);
  return finish(r);
}

std::vector<CheckResult> run_all(const Options& opt) {
  return {check_kron_orthogonality(100, opt), check_kron_determinant(100, opt),
          check_sigma_gradient(50, opt), check_frobenius_inequality(100, opt),
          check_mixed_product(100, opt)};
}

std::string format_line(const CheckResult& r) {
  std::ostringstream os;
  os << r.name << ' ' << (r.passed ? "PASS" : "FAIL") << " measured=" << fmt(r.measured)
     << " tolerance=" << fmt(r.tolerance) << " trials=" << r.trials;
  if (!r.detail.empty()) os << ' ' << r.detail;
  return os.str();
}

}  // namespace soda::verify
