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

#include <cmath>
#include <sstream>

#include "soda/errors.hpp"
#include "soda/harness.hpp"

using namespace soda;

TEST_SUITE("harness") {

TEST_CASE("task names") {
  for (auto k : {TaskKind::kMatrixRegression, TaskKind::kRotatedTarget, TaskKind::kSpectralTarget,
                 TaskKind::kComposedTarget})
    CHECK(parse_task_kind(to_string(k)) == k);
  CHECK(parse_optimizer("CAYLEY") == OrthoOptimizer::kCayley);
  CHECK_THROWS_AS(parse_task_kind("ROTATED"), ConfigError);
}

TEST_CASE("generate_task is deterministic and shaped") {
  SyntheticTask setup;
  setup.kind = TaskKind::kComposedTarget;
  setup.seed = 4;
  const TaskData a = generate_task(setup);
  const TaskData b = generate_task(setup);
  CHECK(a.w0 == b.w0);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.x.rows() == setup.n);
  CHECK(a.x.cols() == setup.samples);
  CHECK(frobenius_norm(a.w0 + a.spectral_part + a.rotation_part - a.target) <= 1e-12);
  setup.seed = 5;
  CHECK(!(generate_task(setup).w0 == a.w0));

  SyntheticTask bad;
  bad.kind = TaskKind::kRotatedTarget;
  bad.n = 7;
  bad.factors = 2;
  CHECK_THROWS_AS(generate_task(bad), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.beta = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  TrainConfig d;
  d.lr_rotation = 0.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  const TrainConfig e = TrainConfig{}.with_base_lr(0.02);
  CHECK(e.lr_rotation == 0.02);
  CHECK(e.lr_spectral == doctest::Approx(0.2));
  CHECK(e.lr_euclidean == 0.02);
}

TEST_CASE("zero steps report the initialization error") {
  SyntheticTask setup;
  const TaskData data = generate_task(setup);
  TrainConfig cfg;
  cfg.steps = 0;
  const RunRecord r = train(data, cfg);
  CHECK(r.final_fit_error == r.initial_fit_error);
  CHECK(r.losses.empty());
  CHECK(!r.failed);
}

TEST_CASE("SVDIFF fits a realizable spectral target") {
  SyntheticTask setup;
  setup.kind = TaskKind::kSpectralTarget;
  setup.n = 16;
  setup.samples = 128;
  const TaskData data = generate_task(setup);
  TrainConfig cfg;
  cfg.method = Method::kSvdiff;
  cfg.steps = 500;
  const auto runs = lr_sweep(data, cfg, kDefaultSweepLrs);
  CHECK(best_run(runs).final_fit_error <= 1e-3);
}

TEST_CASE("KOFT fits a realizable rotated target") {
  SyntheticTask setup;
  setup.kind = TaskKind::kRotatedTarget;
  const TaskData data = generate_task(setup);
  TrainConfig cfg;
  cfg.method = Method::kKoft;
  cfg.steps = 2000;
  const RunRecord r = train(data, cfg);
  CHECK(r.final_fit_error <= 1e-2);
  CHECK(r.max_defect <= 1e-8);
}

TEST_CASE("lr_sweep") {
  SyntheticTask setup;
  const TaskData data = generate_task(setup);
  TrainConfig cfg;
  cfg.steps = 100;
  const double one[] = {0.05};
  CHECK(lr_sweep(data, cfg, one).size() == 1);
  const double lrs[] = {0.1, 0.001, 0.01};
  const auto runs = lr_sweep(data, cfg, lrs);
  REQUIRE(runs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(runs[i].lr == lrs[i]);
  const RunRecord& best = best_run(runs);
  for (const auto& r : runs) CHECK(best.final_fit_error <= r.final_fit_error);
}

TEST_CASE("training is deterministic") {
  SyntheticTask setup;
  setup.kind = TaskKind::kComposedTarget;
  const TaskData data = generate_task(setup);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 16;
  const RunRecord a = train(data, cfg);
  const RunRecord b = train(data, cfg);
  CHECK(a.losses == b.losses);
  CHECK(csv_row(a, false) == csv_row(b, false));
}

TEST_CASE("every method trains with finite loss") {
  SyntheticTask setup;
  setup.kind = TaskKind::kComposedTarget;
  const TaskData data = generate_task(setup);
  for (Method m : kAllMethods) {
    for (auto opt : {OrthoOptimizer::kStiefel, OrthoOptimizer::kCayley}) {
      CAPTURE(to_string(m));
      TrainConfig cfg;
      cfg.method = m;
      cfg.r = (m == Method::kOft || m == Method::kOftShared) ? 4 : (m == Method::kLora ? 1 : 3);
      cfg.optimizer = opt;
      cfg.steps = 200;
      const RunRecord r = train(data, cfg);
      CHECK(!r.failed);
      CHECK(std::isfinite(r.final_fit_error));
      CHECK(r.final_fit_error < r.initial_fit_error);
      CHECK(r.max_defect <= 1e-8);
      CHECK(r.param_count == param_count(m, 8, 8, cfg.r));
    }
  }
}

TEST_CASE("ReLU never yields negative effective singular values") {
  SyntheticTask setup;
  setup.kind = TaskKind::kSpectralTarget;
  setup.negative_spectrum = true;
  const TaskData data = generate_task(setup);
  TrainConfig cfg;
  cfg.method = Method::kSvdiff;
  cfg.steps = 1000;
  const RunRecord relu = train(data, cfg);
  CHECK(relu.negative_values == 0);
  cfg.constraint = Constraint::kNone;
  const RunRecord none = train(data, cfg);
  CHECK(none.negative_values > 0);
  CHECK(none.final_fit_error < relu.final_fit_error);
}

TEST_CASE("ablations have one row per task, variant and lr") {
  const auto suite = default_ablation_suite(8, 2, 0);
  AblationOptions opt;
  opt.base.steps = 50;
  opt.lrs = {0.01, 0.1};
  const auto a = ablation_spectral_vs_orthogonal(suite, opt);
  CHECK(a.rows.size() == 2 * 3 * 2);
  const auto c = ablation_constraint(suite, opt);
  CHECK(c.rows.size() == 2 * 3 * 2);
  const auto o = ablation_optimizer(suite, opt);
  CHECK(o.rows.size() == 2 * 2 * 2);
  for (const auto& row : o.rows) CHECK(row.record.max_defect <= 1e-8);
  CHECK(std::isfinite(a.best_error(1, "SODA_SVD")));
  CHECK(std::isinf(a.best_error(0, "NOPE")));
}

TEST_CASE("csv rows") {
  RunRecord r;
  r.method = Method::kKoft;
  r.n = 8;
  r.r = 3;
  r.lr = 0.1;
  r.steps = 10;
  r.final_fit_error = 0.25;
  r.param_count = 12;
  r.seconds = 1.5;
  CHECK(csv_row(r, false) == "KOFT,8,3,0.1,RELU,STIEFEL,10,0.25,0,12,,ok,0,0");
  CHECK(csv_row(r, true) == "KOFT,8,3,0.1,RELU,STIEFEL,10,0.25,0,12,1.5,ok,0,0");
  r.failed = true;
  CHECK(csv_row(r, false).find(",failed,") != std::string::npos);
  std::ostringstream os;
  write_csv(os, std::span(&r, 1), false);
  CHECK(os.str().rfind(std::string(kCsvHeader) + "\n", 0) == 0);
}

}  // TEST_SUITE
