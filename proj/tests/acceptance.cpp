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

// Acceptance battery: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "soda/adapters.hpp"
#include "soda/cli.hpp"
#include "soda/harness.hpp"
#include "soda/matrix_io.hpp"
#include "soda/optim.hpp"
#include "soda/verify.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace soda;
using soda::testing::gradient_check;
using soda::testing::random_matrix;
using soda::testing::random_orthogonal;
using soda::testing::randomize;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) { return format_double(v); }

int invoke(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "soda");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Integer k-th root if n is a perfect k-th power, else 0.
std::size_t exact_root(std::size_t n, std::size_t k) {
  for (std::size_t b = 1; b <= n; ++b) {
    std::size_t p = 1;
    for (std::size_t i = 0; i < k && p <= n; ++i) p *= b;
    if (p == n) return b;
    if (p > n) break;
  }
  return 0;
}

Outcome kron_orthogonality() {
  const auto t0 = Clock::now();
  const auto orth = verify::check_kron_orthogonality(100);
  const auto det = verify::check_kron_determinant(100);
  const double secs = seconds_since(t0);
  return {orth.passed && det.passed && secs < 5.0,
          "defect=" + num(orth.measured) + " (<= 1e-07) det_dev=" + num(det.measured) +
              " (<= 1e-10) trials=100 seconds=" + num(secs) + " (< 5)"};
}

Outcome sigma_gradient() {
  const auto t0 = Clock::now();
  const auto r = verify::check_sigma_gradient(50);
  const double secs = seconds_since(t0);
  return {r.passed && r.measured <= 1e-5 && secs < 10.0,
          "max_rel_err=" + num(r.measured) + " (<= 1e-05) trials=50 seconds=" + num(secs) + " (< 10)"};
}

Outcome frobenius_contraction() {
  const auto t0 = Clock::now();
  const auto r = verify::check_frobenius_inequality(100);
  const double secs = seconds_since(t0);
  return {r.passed && secs < 5.0, "link_dev=" + num(r.measured) + " (<= 1e-10) trials=100 " +
                                       r.detail + " seconds=" + num(secs) + " (< 5)"};
}

Outcome parameter_counts() {
  int checked = 0, wrong = 0;
  std::string first_bad;
  for (std::size_t n : {8u, 64u, 256u}) {
    for (std::size_t r : {1u, 2u, 3u, 4u}) {
      std::string table;
      if (invoke({"params", std::to_string(n), std::to_string(r)}, &table) != 0) {
        ++wrong;
        continue;
      }
      auto cell = [&](const std::string& name) {
        std::istringstream is(table);
        std::string line;
        while (std::getline(is, line)) {
          if (line.rfind(name + ",", 0) == 0) {
            const auto a = line.find(',', name.size() + 1);
            const auto b = line.find(',', a + 1);
            return line.substr(a + 1, b - a - 1);
          }
        }
        return std::string("missing");
      };
      auto expect = [&](const std::string& name, std::size_t value) {
        ++checked;
        if (cell(name) != std::to_string(value)) {
          ++wrong;
          if (first_bad.empty())
            first_bad = name + " n=" + std::to_string(n) + " r=" + std::to_string(r) + " got " + cell(name);
        }
      };
      expect("LORA", 2 * n * r);
      if (n % r == 0) {
        expect("OFT", n * n / r);
        expect("OFT_SHARED", n * n / (r * r));
      }
      if (const std::size_t root = exact_root(n, r); root != 0) {
        expect("KOFT", r * root * root);
        expect("SODA", n + r * root * root);
      }
    }
  }
  return {wrong == 0 && checked > 0, "checked=" + std::to_string(checked) + " mismatches=" +
                                         std::to_string(wrong) + (first_bad.empty() ? "" : " first=" + first_bad)};
}

std::size_t default_rank(Method m) {
  switch (m) {
    case Method::kLora: return 1;
    case Method::kOft:
    case Method::kOftShared: return 4;
    default: return 3;
  }
}

Outcome initialization_identity() {
  std::mt19937_64 rng(505);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t n : {8u, 16u, 64u}) {
    const Matrix w0 = random_matrix(n, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
    const FrozenBase base(w0);
    const double tol = 1e-8 * (1.0 + frobenius_norm(w0));
    for (Method m : kAllMethods) {
      for (Constraint c : {Constraint::kRelu, Constraint::kSoftplus, Constraint::kNone}) {
        const auto st = init_adapter(base, m, default_rank(m), c, 1);
        worst = std::max(worst, frobenius_norm(effective_weight(base, st) - w0) / tol);
        ++cases;
      }
    }
  }
  return {worst <= 1.0, "worst_dev/tol=" + num(worst) + " (<= 1) cases=" + std::to_string(cases)};
}

Outcome backward_correctness() {
  std::mt19937_64 rng(606);
  double worst = 0.0;
  std::string worst_method;
  int instances = 0;
  for (Method m : kAllMethods) {
    for (int t = 0; t < 20; ++t) {
      const FrozenBase base(random_matrix(8, 8, rng, 1.0 / std::sqrt(8.0)));
      const Constraint c = uses_spectral_shift(m) ? static_cast<Constraint>(t % 3) : Constraint::kRelu;
      AdapterState st = init_adapter(base, m, default_rank(m), c, t);
      randomize(base, st, rng);
      const double e = gradient_check(base, st, random_matrix(8, 6, rng), random_matrix(8, 6, rng));
      if (e > worst) {
        worst = e;
        worst_method = std::string(to_string(m));
      }
      ++instances;
    }
  }
  const AdapterState probe = init_adapter(FrozenBase(Matrix::identity(8)), Method::kSodaSvd, 3);
  const bool sizes_ok = probe.factor_sizes == std::vector<std::size_t>{2, 2, 2};
  return {worst <= 1e-5 && sizes_ok, "max_rel_err=" + num(worst) + " (<= 1e-05, " + worst_method +
                                         ") instances=" + std::to_string(instances) +
                                         " kron_sizes=" + (sizes_ok ? "2x2x2" : "unexpected")};
}

Outcome stiefel_integrity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(707);
  Matrix v = random_orthogonal(8, rng);
  StiefelOptimizerState st;
  st.lr = 0.1;
  double max_defect = 0.0;
  for (int i = 0; i < 10000; ++i) {
    v = stiefel_step(v, random_matrix(8, 8, rng), st);
    max_defect = std::max(max_defect, orthogonality_defect(v));
  }

  Matrix target = random_orthogonal(8, rng);
  Matrix start = random_orthogonal(8, rng);
  // Match determinant signs.
  if (determinant(target) * determinant(start) < 0)
    for (std::size_t i = 0; i < 8; ++i) start(i, 0) = -start(i, 0);
  auto objective = [&](const Matrix& x) {
    const double d = frobenius_norm(x - target);
    return d * d;
  };
  double best_ratio = 0.0;
  std::string per_lr;
  for (double lr : {1e-2, 1e-1}) {
    StiefelOptimizerState ps;
    ps.lr = lr;
    Matrix x = start;
    for (int i = 0; i < 200; ++i) x = stiefel_step(x, 2.0 * (x - target), ps);
    const double ratio = objective(start) / std::max(objective(x), 1e-300);
    best_ratio = std::max(best_ratio, ratio);
    per_lr += " reduction@" + num(lr) + "=" + num(ratio);
  }
  const double secs = seconds_since(t0);
  return {max_defect <= 1e-8 && best_ratio >= 100.0 && secs < 30.0,
          "max_defect=" + num(max_defect) + " (<= 1e-08, 10000 steps)" + per_lr +
              " (best >= 100) seconds=" + num(secs) + " (< 30)"};
}

Outcome realizable_convergence() {
  std::string detail;
  bool ok = true;
  for (auto [kind, method] : {std::pair{TaskKind::kSpectralTarget, Method::kSvdiff},
                              std::pair{TaskKind::kRotatedTarget, Method::kKoft}}) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SyntheticTask setup;
      setup.kind = kind;
      setup.n = 8;
      setup.noise = 0.0;
      setup.seed = seed;
      TrainConfig cfg;
      cfg.method = method;
      cfg.r = 3;
      cfg.steps = 2000;
      cfg.seed = seed;
      const auto runs = lr_sweep(generate_task(setup), cfg, kDefaultSweepLrs);
      worst = std::max(worst, best_run(runs).final_fit_error);
    }
    const double secs = seconds_since(t0);
    ok = ok && worst <= 1e-2 && secs < 60.0;
    detail += std::string(to_string(method)) + "_worst_best_of_sweep=" + num(worst) +
              " (<= 1e-02, 5 seeds) seconds=" + num(secs) + " (< 60) ";
  }
  detail.pop_back();
  return {ok, detail};
}

Outcome ablation_ordering() {
  const auto suite = default_ablation_suite(8, 5, 0);
  const AblationReport rep = ablation_spectral_vs_orthogonal(suite, AblationOptions{});
  int wins = 0;
  std::string cells;
  for (std::size_t t = 0; t < suite.size(); ++t) {
    const double sv = rep.best_error(t, "SVDIFF");
    const double ko = rep.best_error(t, "KOFT");
    const double so = rep.best_error(t, "SODA_SVD");
    if (so < sv && so < ko) ++wins;
    cells += " seed" + std::to_string(suite[t].seed) + "=" + num(so) + "/" + num(sv) + "/" + num(ko);
  }
  return {wins >= 4, "soda_wins=" + std::to_string(wins) + "/5 (>= 4) soda/svdiff/koft:" + cells};
}

Outcome constraint_ablation() {
  const auto suite = default_ablation_suite(8, 5, 0);
  AblationOptions opt;
  opt.base.steps = 1000;
  const AblationReport rep = ablation_constraint(suite, opt);
  std::size_t relu_negative = 0;
  int unfinished = 0;
  for (const auto& row : rep.rows) {
    const auto& r = row.record;
    if (row.variant == "RELU") relu_negative += r.negative_values;
    bool finite = !r.failed && r.losses.size() == 1000;
    for (double l : r.losses) finite = finite && std::isfinite(l);
    if (!finite) ++unfinished;
  }
  return {relu_negative == 0 && unfinished == 0,
          "relu_negative_values=" + std::to_string(relu_negative) + " (== 0) runs=" +
              std::to_string(rep.rows.size()) + " nonfinite_or_short=" + std::to_string(unfinished) + " (== 0)"};
}

Outcome merge_semantics(const fs::path& dir) {
  auto train_to = [&](const std::string& method, const std::string& r, const std::string& steps,
                      const std::string& tag) {
    return invoke({"train", "--task", "COMPOSED_TARGET", "--method", method, "--r", r, "--steps", steps,
                   "--seed", "11", "--out", (dir / (tag + ".csv")).string(), "--save_checkpoint",
                   (dir / (tag + ".ckpt")).string(), "--save_base", (dir / "base.txt").string(),
                   "--save_residual", (dir / (tag + ".res.txt")).string()});
  };
  if (train_to("SODA_SVD", "3", "300", "a") || train_to("LORA", "1", "300", "b") ||
      train_to("LORA", "1", "0", "zero")) {
    return {false, "training a checkpoint failed"};
  }
  const std::string base = (dir / "base.txt").string();
  if (invoke({"merge", (dir / "a.ckpt").string(), (dir / "b.ckpt").string(), base, "--out",
              (dir / "ab").string()}) ||
      invoke({"merge", (dir / "a.ckpt").string(), (dir / "zero.ckpt").string(), base, "--out",
              (dir / "az").string()})) {
    return {false, "merge command failed"};
  }
  const Matrix sum = load_matrix(dir / "a.res.txt") + load_matrix(dir / "b.res.txt");
  const double dev = frobenius_norm(load_matrix(dir / "ab.residual.txt") - sum);
  const bool zero_exact = load_matrix(dir / "zero.res.txt") == Matrix(8, 8) &&
                          load_matrix(dir / "az.residual.txt") == load_matrix(dir / "a.res.txt");
  const bool lib_exact = merge(sum, Matrix(8, 8)) == sum;
  return {dev <= 1e-12 && zero_exact && lib_exact,
          "sum_dev=" + num(dev) + " (<= 1e-12) zero_merge_exact=" + (zero_exact && lib_exact ? "yes" : "no")};
}

Outcome determinism(const fs::path& dir) {
  const std::vector<std::vector<std::string>> commands = {
      {"train", "--task", "COMPOSED_TARGET", "--steps", "500", "--batch_size", "16", "--seed", "7"},
      {"train", "--method", "LORA", "--r", "1", "--steps", "300", "--seed", "3"},
      {"sweep", "--task", "ROTATED_TARGET", "--method", "KOFT", "--optimizer", "CAYLEY", "--steps", "300", "--seed", "5"},
      {"sweep", "--task", "COMPOSED_TARGET", "--batch_size", "8", "--steps", "300", "--seed", "9"}};
  int identical = 0;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    std::string files[2];
    for (int rep = 0; rep < 2; ++rep) {
      auto args = commands[i];
      const fs::path out = dir / ("det" + std::to_string(i) + "_" + std::to_string(rep) + ".csv");
      args.push_back("--out");
      args.push_back(out.string());
      if (invoke(args) != 0) return {false, "command " + std::to_string(i) + " failed"};
      files[rep] = slurp(out);
    }
    if (files[0] == files[1] && !files[0].empty()) ++identical;
  }
  return {identical == static_cast<int>(commands.size()),
          "byte_identical=" + std::to_string(identical) + "/" + std::to_string(commands.size())};
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / "soda_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"kronecker_orthogonality", kron_orthogonality},
      {"singular_value_gradient", sigma_gradient},
      {"frobenius_contraction", frobenius_contraction},
      {"parameter_counts", parameter_counts},
      {"initialization_identity", initialization_identity},
      {"backward_correctness", backward_correctness},
      {"stiefel_integrity", stiefel_integrity},
      {"realizable_convergence", realizable_convergence},
      {"ablation_ordering", ablation_ordering},
      {"constraint_ablation", constraint_ablation},
      {"merge_semantics", [&] { return merge_semantics(dir); }},
      {"determinism", [&] { return determinism(dir); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.passed) ++failures;
    std::cout << "criterion " << (i + 1) << ' ' << criteria[i].first << ' '
              << (o.passed ? "PASS" : "FAIL") << ' ' << o.detail << std::endl;
  }
  fs::remove_all(dir);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
