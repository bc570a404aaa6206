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

#include "soda/linalg.hpp"
#include "soda/verify.hpp"

using namespace soda;

TEST_SUITE("verify") {

TEST_CASE("all checks pass on a fixed seed") {
  const auto results = verify::run_all();
  CHECK(results.size() == 5);
  for (const auto& r : results) {
    CAPTURE(verify::format_line(r));
    CHECK(r.passed);
    CHECK(r.measured <= r.tolerance);
  }
}

TEST_CASE("checks are deterministic per seed") {
  verify::Options opt;
  opt.seed = 42;
  const auto a = verify::check_sigma_gradient(10, opt);
  const auto b = verify::check_sigma_gradient(10, opt);
  CHECK(a.measured == b.measured);
  CHECK(a.passed);
}

TEST_CASE("corrupted kron is caught") {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{0, 1}, {2, 3}};
  CHECK(!(verify::corrupted_kron(a, b) == kron(a, b)));
  verify::Options opt;
  opt.kron = verify::corrupted_kron;
  CHECK(!verify::check_kron_orthogonality(10, opt).passed);
  CHECK(!verify::check_mixed_product(10, opt).passed);
  const auto all = verify::run_all(opt);
  bool any_failed = false;
  for (const auto& r : all) any_failed = any_failed || !r.passed;
  CHECK(any_failed);
}

TEST_CASE("format_line") {
  verify::CheckResult r{"demo", true, 0.5, 1.0, 3, "x=1"};
  CHECK(verify::format_line(r) == "demo PASS measured=0.5 tolerance=1 trials=3 x=1");
  r.passed = false;
  CHECK(verify::format_line(r).rfind("demo FAIL", 0) == 0);
}

}  // TEST_SUITE
