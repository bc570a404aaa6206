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
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soda/adapters.hpp"
#include "soda/matrix.hpp"

namespace soda {

enum class TaskKind { kMatrixRegression, kRotatedTarget, kSpectralTarget, kComposedTarget };
enum class OrthoOptimizer { kStiefel, kCayley };

std::string_view to_string(TaskKind k);
std::string_view to_string(OrthoOptimizer o);
TaskKind parse_task_kind(std::string_view s);
OrthoOptimizer parse_optimizer(std::string_view s);

struct SyntheticTask {
  TaskKind kind = TaskKind::kSpectralTarget;
  std::size_t n = 8;
  std::size_t samples = 64;
  double noise = 0.0;
  std::uint64_t seed = 0;
  // Planted Kronecker rotations use choose_kron_factorization(n, factors).
  std::size_t factors = 3;
  // Std-dev of the planted skew generator entries.
  double rotation_strength = 0.5;
  // Planted shifts are δ*_i = spectral_strength · σ_i · N(0, 1).
  double spectral_strength = 0.3;
  // Flip the sign of the middle planted singular value (not reachable under RELU).
  bool negative_spectrum = false;
};

struct TaskData {
  Matrix w0;
  Matrix target;
  Matrix x;  // n x samples
  Matrix y;  // n x samples
  // Planted residual parts; set for COMPOSED_TARGET (target = w0 + spectral + rotation).
  Matrix spectral_part;
  Matrix rotation_part;
};

TaskData generate_task(const SyntheticTask& setup);

struct TrainConfig {
  Method method = Method::kSodaSvd;
  std::size_t r = 3;
  Constraint constraint = Constraint::kRelu;
  double lr_rotation = 1e-2;
  double lr_spectral = 1e-1;
  double lr_euclidean = 1e-2;
  double beta = 0.8;
  bool momentum = true;
  std::size_t steps = 1000;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  OrthoOptimizer optimizer = OrthoOptimizer::kStiefel;

  void validate() const;
  /// Group learning rates for a base lr: rotation = lr, spectral = 10·lr, euclidean = lr.
  TrainConfig with_base_lr(double lr) const;
};

struct RunRecord {
  Method method = Method::kSodaSvd;
  std::size_t n = 0;
  std::size_t r = 0;
  double lr = 0.0;
  Constraint constraint = Constraint::kRelu;
  OrthoOptimizer optimizer = OrthoOptimizer::kStiefel;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  std::vector<double> losses;
  double initial_fit_error = 0.0;
  double final_fit_error = 0.0;
  double final_defect = 0.0;
  double max_defect = 0.0;
  std::size_t param_count = 0;
  // Most negative effective spectrum entries seen at any step (spectral methods).
  std::size_t negative_values = 0;
  double seconds = 0.0;
  bool failed = false;
  std::string failure;
};

struct TrainedAdapter {
  RunRecord record;
  AdapterState state;
};

/// Squared-error training of one adapter against the task's samples.
TrainedAdapter train_adapter(const TaskData& task, const TrainConfig& config);
RunRecord train(const TaskData& task, const TrainConfig& config);

inline constexpr double kDefaultSweepLrs[] = {1e-3, 1e-2, 1e-1};

/// One run per lr (applied through TrainConfig::with_base_lr), in input order.
std::vector<RunRecord> lr_sweep(const TaskData& task, const TrainConfig& base,
                                std::span<const double> lrs);
/// Lowest final fit error among non-failed runs (or the first run if all failed).
const RunRecord& best_run(std::span<const RunRecord> runs);

struct AblationRow {
  std::string variant;
  std::size_t task_index = 0;
  RunRecord record;
};

struct AblationReport {
  std::string name;
  std::vector<AblationRow> rows;

  /// Best-of-sweep final fit error for one (task, variant) cell.
  double best_error(std::size_t task_index, std::string_view variant) const;
};

struct AblationOptions {
  TrainConfig base;
  std::vector<double> lrs{std::begin(kDefaultSweepLrs), std::end(kDefaultSweepLrs)};
};

/// SVDIFF vs KOFT vs SODA_SVD on each task.
AblationReport ablation_spectral_vs_orthogonal(std::span<const SyntheticTask> suite,
                                               const AblationOptions& options);
/// SODA_SVD under NONE / SOFTPLUS / RELU.
AblationReport ablation_constraint(std::span<const SyntheticTask> suite,
                                   const AblationOptions& options);
/// KOFT with the Stiefel optimizer vs Cayley, one row per (optimizer, lr).
AblationReport ablation_optimizer(std::span<const SyntheticTask> suite,
                                  const AblationOptions& options);

/// Combined spectral + basis-rotation targets, one per seed.
std::vector<SyntheticTask> default_ablation_suite(std::size_t n, std::size_t count,
                                                  std::uint64_t seed);

inline constexpr std::string_view kCsvHeader =
    "method,n,r,lr,constraint,optimizer,steps,final_fit_error,final_defect,param_count,seconds,"
    "status,seed,negative_values";

/// One CSV row. `timing` false leaves the seconds field empty so that output
/// is reproducible byte for byte.
std::string csv_row(const RunRecord& r, bool timing);
void write_csv(std::ostream& os, std::span<const RunRecord> runs, bool timing);

}  // namespace soda
