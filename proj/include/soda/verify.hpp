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
#include <functional>
#include <string>
#include <vector>

#include "soda/matrix.hpp"

namespace soda::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  int trials = 0;
  std::string detail;  // extra measurements, or the failing seed/trial
};

/// Kronecker routine under test. Defaults to soda::kron; a broken one can be
/// injected as a negative control.
using KronFn = std::function<Matrix(const Matrix&, const Matrix&)>;

struct Options {
  std::uint64_t seed = 0;
  KronFn kron;  // empty = library kron
};

/// Max ‖KᵀK − I‖_F over products of random orthogonal factor triples, also
/// compared entrywise with an explicit Kronecker oracle.
CheckResult check_kron_orthogonality(int trials, const Options& opt = {});
/// |det K| vs 1 and det K vs ∏ det(V_i)^{n/n_i}.
CheckResult check_kron_determinant(int trials, const Options& opt = {});
/// Analytic ⟨u_i, δh⟩⟨v_i, x⟩ vs central differences of ⟨δh, Wx⟩ in σ_i.
CheckResult check_sigma_gradient(int trials, const Options& opt = {});
/// Each equality link of ‖ΔW′‖² = ‖ΔΣ‖² = ‖(UᵀΔWV)⊙I‖² ≤ ‖UᵀΔWV‖² = ‖ΔW‖².
CheckResult check_frobenius_inequality(int trials, const Options& opt = {});
/// (A⊗B)(C⊗D) = (AC)⊗(BD) and three-factor associativity on random rectangular factors.
CheckResult check_mixed_product(int trials, const Options& opt = {});

std::vector<CheckResult> run_all(const Options& opt = {});

/// Kronecker product with each block transposed: a[i][j]·bᵀ.
Matrix corrupted_kron(const Matrix& a, const Matrix& b);

std::string format_line(const CheckResult& r);

}  // namespace soda::verify
