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

#include "soda/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "soda/errors.hpp"
#include "soda/linalg.hpp"
#include "soda/matrix_io.hpp"
#include "soda/optim.hpp"

namespace soda {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * dist(rng);
  return m;
}

Matrix planted_kronecker_rotation(std::size_t n, std::size_t factors, double strength,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, strength);
  std::vector<Matrix> rs;
  for (auto s : choose_kron_factorization(n, factors)) {
    SkewSymmetric gen(s);
    for (double& v : gen.lower()) v = dist(rng);
    rs.push_back(cayley(gen));
  }
  return kron_all(rs);
}

std::vector<double> planted_spectrum(const SyntheticTask& setup, std::span<const double> sigma,
                                     std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double shifted = sigma[i] + setup.spectral_strength * sigma[i] * dist(rng);
    out[i] = std::max(shifted, 0.0);
  }
  if (setup.negative_spectrum) out[out.size() / 2] = -out[out.size() / 2];
  return out;
}

Matrix compose_svd(const Matrix& u, std::span<const double> s, const Matrix& vt) {
  Matrix us = u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= s[j];
  return matmul(us, vt);
}

Matrix select_columns(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(m.rows(), idx.size());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = m(i, idx[j]);
  return out;
}

double relative_fit_error(const Matrix& w, const Matrix& target) {
  const double denom = frobenius_norm(target);
  const double num = frobenius_norm(w - target);
  return denom > 0.0 ? num / denom : num;
}

Matrix as_row(std::span<const double> v) { return Matrix(1, v.size(), {v.begin(), v.end()}); }

// Optimizer slots for every trainable of one adapter.
class ParameterUpdater {
 public:
  ParameterUpdater(const TrainConfig& cfg, const AdapterState& st) : cfg_(cfg) {
    const double beta = cfg.momentum ? cfg.beta : 0.0;
    auto euclid = [&](double lr) {
      EuclideanOptimizerState s;
      s.lr = lr;
      s.beta = beta;
      return s;
    };
    b_ = euclid(cfg.lr_euclidean);
    a_ = euclid(cfg.lr_euclidean);
    delta_ = euclid(cfg.lr_spectral);
    auto add_orthogonal = [&](const std::vector<Matrix>& mats, std::vector<StiefelOptimizerState>& st_out,
                              std::vector<CayleyParameter>& cp_out) {
      for (const auto& m : mats) {
        StiefelOptimizerState s;
        s.lr = cfg.lr_rotation;
        s.beta = beta;
        st_out.push_back(std::move(s));
        cp_out.emplace_back(m.rows());
      }
    };
    add_orthogonal(st.params.blocks, block_stiefel_, block_cayley_);
    add_orthogonal(st.params.factors, factor_stiefel_, factor_cayley_);
  }

  void apply(AdapterState& st, const ParameterGradients& g) {
    auto& p = st.params;
    if (!p.b.empty()) p.b = euclidean_step(p.b, g.b, b_);
    if (!p.a.empty()) p.a = euclidean_step(p.a, g.a, a_);
    if (!p.delta.empty()) {
      const Matrix next = euclidean_step(as_row(p.delta), as_row(g.delta), delta_);
      std::copy(next.data().begin(), next.data().end(), p.delta.begin());
    }
    step_orthogonal(p.blocks, g.blocks, block_stiefel_, block_cayley_);
    step_orthogonal(p.factors, g.factors, factor_stiefel_, factor_cayley_);
  }

 private:
  void step_orthogonal(std::vector<Matrix>& mats, const std::vector<Matrix>& grads,
                       std::vector<StiefelOptimizerState>& stiefel,
                       std::vector<CayleyParameter>& cay) {
    for (std::size_t i = 0; i < mats.size(); ++i) {
      if (cfg_.optimizer == OrthoOptimizer::kStiefel) {
        mats[i] = stiefel_step(mats[i], grads[i], stiefel[i]);
      } else {
        cay[i] = cayley_step(cay[i], grads[i], cfg_.lr_rotation);
        mats[i] = cay[i].rotation();
      }
    }
  }

  const TrainConfig& cfg_;
  EuclideanOptimizerState b_, a_, delta_;
  std::vector<StiefelOptimizerState> block_stiefel_, factor_stiefel_;
  std::vector<CayleyParameter> block_cayley_, factor_cayley_;
};

std::size_t count_negative(const FrozenBase& base, const AdapterState& st) {
  if (!uses_spectral_shift(st.method)) return 0;
  const auto s = effective_spectrum(base, st);
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](double v) { return v < 0.0; }));
}

}  // namespace

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kMatrixRegression: return "MATRIX_REGRESSION";
    case TaskKind::kRotatedTarget: return "ROTATED_TARGET";
    case TaskKind::kSpectralTarget: return "SPECTRAL_TARGET";
    case TaskKind::kComposedTarget: return "COMPOSED_TARGET";
  }
  return "?";
}

std::string_view to_string(OrthoOptimizer o) {
  return o == OrthoOptimizer::kStiefel ? "STIEFEL" : "CAYLEY";
}

TaskKind parse_task_kind(std::string_view s) {
  const std::string up = upper(s);
  for (auto k : {TaskKind::kMatrixRegression, TaskKind::kRotatedTarget, TaskKind::kSpectralTarget,
                 TaskKind::kComposedTarget})
    if (to_string(k) == up) return k;
  throw ConfigError("unknown task kind '" + std::string(s) +
                    "' (expected MATRIX_REGRESSION, ROTATED_TARGET, SPECTRAL_TARGET, "
                    "COMPOSED_TARGET)");
}

OrthoOptimizer parse_optimizer(std::string_view s) {
  const std::string up = upper(s);
  if (up == "STIEFEL") return OrthoOptimizer::kStiefel;
  if (up == "CAYLEY") return OrthoOptimizer::kCayley;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected STIEFEL, CAYLEY)");
}

TaskData generate_task(const SyntheticTask& setup) {
  if (setup.n == 0) throw ConfigError("task dimension n must be positive");
  if (setup.samples == 0) throw ConfigError("task sample count must be positive");
  if (!(setup.noise >= 0.0)) throw ConfigError("task noise must be nonnegative");
  std::mt19937_64 rng(setup.seed);
  const std::size_t n = setup.n;
  TaskData d;
  d.w0 = gaussian(n, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));

  switch (setup.kind) {
    case TaskKind::kMatrixRegression:
      d.target = d.w0 + gaussian(n, n, rng, setup.spectral_strength / std::sqrt(static_cast<double>(n)));
      break;
    case TaskKind::kRotatedTarget:
      d.target = matmul(d.w0, planted_kronecker_rotation(n, setup.factors, setup.rotation_strength, rng));
      break;
    case TaskKind::kSpectralTarget: {
      const SpectralDecomposition sd = svd(d.w0);
      d.target = compose_svd(sd.u, planted_spectrum(setup, sd.sigma, rng), sd.vt);
      break;
    }
    case TaskKind::kComposedTarget: {
      const SpectralDecomposition sd = svd(d.w0);
      const auto star = planted_spectrum(setup, sd.sigma, rng);
      std::vector<double> diff(star.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = star[i] - sd.sigma[i];
      d.spectral_part = compose_svd(sd.u, diff, sd.vt);
      // Basis rotation V0 → V0·K*, the part SODA's rotation factors can express.
      const Matrix rotated_v = matmul(sd.vt.transpose(),
                                      planted_kronecker_rotation(n, setup.factors,
                                                                 setup.rotation_strength, rng));
      d.rotation_part = compose_svd(sd.u, sd.sigma, rotated_v.transpose()) - d.w0;
      d.target = d.w0 + d.spectral_part + d.rotation_part;
      break;
    }
  }
  d.x = gaussian(n, setup.samples, rng);
  d.y = matmul(d.target, d.x);
  if (setup.noise > 0.0) d.y += gaussian(n, setup.samples, rng, setup.noise);
  return d;
}

void TrainConfig::validate() const {
  if (r == 0) throw ConfigError("r must be at least 1");
  for (auto [name, v] : {std::pair{"lr_rotation", lr_rotation}, std::pair{"lr_spectral", lr_spectral},
                         std::pair{"lr_euclidean", lr_euclidean}}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string(name) + " must be a positive finite number");
    }
  }
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1)");
}

TrainConfig TrainConfig::with_base_lr(double lr) const {
  TrainConfig c = *this;
  c.lr_rotation = lr;
  c.lr_spectral = 10.0 * lr;
  c.lr_euclidean = lr;
  return c;
}

TrainedAdapter train_adapter(const TaskData& task, const TrainConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const FrozenBase base(task.w0);
  const std::size_t n = base.cols();

  TrainedAdapter out;
  RunRecord& rec = out.record;
  rec.method = cfg.method;
  rec.n = n;
  rec.r = cfg.r;
  rec.lr = cfg.lr_rotation;
  rec.constraint = cfg.constraint;
  rec.optimizer = cfg.optimizer;
  rec.seed = cfg.seed;

  AdapterState& st = out.state;
  st = init_adapter(base, cfg.method, cfg.r, cfg.constraint, cfg.seed);
  rec.param_count = param_count(cfg.method, base.rows(), n, cfg.r);
  if (st.params.scalar_count() != rec.param_count) {
    throw ConfigError("trainable count " + std::to_string(st.params.scalar_count()) +
                      " disagrees with param_count " + std::to_string(rec.param_count));
  }

  ParameterUpdater updater(cfg, st);
  std::mt19937_64 batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t samples = task.x.cols();
  const bool full_batch = cfg.batch_size == 0 || cfg.batch_size >= samples;
  std::uniform_int_distribution<std::size_t> pick(0, samples - 1);
  std::vector<std::size_t> idx(full_batch ? 0 : cfg.batch_size);

  rec.initial_fit_error = relative_fit_error(effective_weight(base, st), task.target);
  rec.max_defect = max_orthogonality_defect(st);
  rec.negative_values = count_negative(base, st);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Matrix xb, yb;
    if (full_batch) {
      xb = task.x;
      yb = task.y;
    } else {
      for (auto& i : idx) i = pick(batch_rng);
      xb = select_columns(task.x, idx);
      yb = select_columns(task.y, idx);
    }
    const double bsz = static_cast<double>(xb.cols());
    Matrix err = forward(base, st, xb) - yb;
    const double loss = dot(err, err) / bsz;
    if (!std::isfinite(loss)) {
      rec.failed = true;
      rec.failure = "non-finite loss at step " + std::to_string(step);
      break;
    }
    rec.losses.push_back(loss);
    err *= 2.0 / bsz;
    try {
      updater.apply(st, backward(base, st, xb, err));
    } catch (const NumericError& e) {
      rec.failed = true;
      rec.failure = e.what();
      break;
    }
    ++rec.steps;
    rec.max_defect = std::max(rec.max_defect, max_orthogonality_defect(st));
    rec.negative_values = std::max(rec.negative_values, count_negative(base, st));
  }

  const Matrix w = effective_weight(base, st);
  rec.final_fit_error = w.all_finite() ? relative_fit_error(w, task.target)
                                       : std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(rec.final_fit_error) && !rec.failed) {
    rec.failed = true;
    rec.failure = "non-finite effective weight";
  }
  rec.final_defect = max_orthogonality_defect(st);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

RunRecord train(const TaskData& task, const TrainConfig& config) {
  return train_adapter(task, config).record;
}

std::vector<RunRecord> lr_sweep(const TaskData& task, const TrainConfig& base,
                                std::span<const double> lrs) {
  std::vector<std::future<RunRecord>> jobs;
  jobs.reserve(lrs.size());
  for (double lr : lrs) {
    const TrainConfig cfg = base.with_base_lr(lr);
    cfg.validate();
    jobs.push_back(std::async(std::launch::async, [&task, cfg] { return train(task, cfg); }));
  }
  std::vector<RunRecord> out;
  out.reserve(jobs.size());
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

const RunRecord& best_run(std::span<const RunRecord> runs) {
  if (runs.empty()) throw ConfigError("best_run: no runs");
  const RunRecord* best = nullptr;
  for (const auto& r : runs) {
    if (r.failed) continue;
    if (!best || r.final_fit_error < best->final_fit_error) best = &r;
  }
  return best ? *best : runs.front();
}

double AblationReport::best_error(std::size_t task_index, std::string_view variant) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : rows) {
    if (row.task_index != task_index || row.variant != variant || row.record.failed) continue;
    best = std::min(best, row.record.final_fit_error);
  }
  return best;
}

namespace {

template <typename Variant, typename Apply>
AblationReport run_ablation(std::string name, std::span<const SyntheticTask> suite,
                            const AblationOptions& opt, std::span<const Variant> variants,
                            Apply apply) {
  AblationReport report;
  report.name = std::move(name);
  for (std::size_t t = 0; t < suite.size(); ++t) {
    const TaskData data = generate_task(suite[t]);
    for (const auto& v : variants) {
      TrainConfig cfg = opt.base;
      cfg.seed = suite[t].seed;
      cfg.r = suite[t].factors;
      const std::string label = apply(cfg, v);
      for (auto& rec : lr_sweep(data, cfg, opt.lrs)) {
        report.rows.push_back({label, t, std::move(rec)});
      }
    }
  }
  return report;
}

}  // namespace

AblationReport ablation_spectral_vs_orthogonal(std::span<const SyntheticTask> suite,
                                               const AblationOptions& options) {
  static constexpr Method kVariants[] = {Method::kSvdiff, Method::kKoft, Method::kSodaSvd};
  return run_ablation<Method>("spectral_vs_orthogonal", suite, options, kVariants,
                              [](TrainConfig& c, Method m) {
                                c.method = m;
                                return std::string(to_string(m));
                              });
}

AblationReport ablation_constraint(std::span<const SyntheticTask> suite,
                                   const AblationOptions& options) {
  static constexpr Constraint kVariants[] = {Constraint::kNone, Constraint::kSoftplus,
                                             Constraint::kRelu};
  return run_ablation<Constraint>("constraint", suite, options, kVariants,
                                  [](TrainConfig& c, Constraint k) {
                                    c.method = Method::kSodaSvd;
                                    c.constraint = k;
                                    return std::string(to_string(k));
                                  });
}

AblationReport ablation_optimizer(std::span<const SyntheticTask> suite,
                                  const AblationOptions& options) {
  static constexpr OrthoOptimizer kVariants[] = {OrthoOptimizer::kStiefel, OrthoOptimizer::kCayley};
  return run_ablation<OrthoOptimizer>("optimizer", suite, options, kVariants,
                                      [](TrainConfig& c, OrthoOptimizer o) {
                                        c.method = Method::kKoft;
                                        c.optimizer = o;
                                        return std::string(to_string(o));
                                      });
}

std::vector<SyntheticTask> default_ablation_suite(std::size_t n, std::size_t count,
                                                  std::uint64_t seed) {
  std::vector<SyntheticTask> suite;
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticTask t;
    t.kind = TaskKind::kComposedTarget;
    t.n = n;
    t.samples = 8 * n;
    t.seed = seed + i;
    suite.push_back(t);
  }
  return suite;
}

std::string csv_row(const RunRecord& r, bool timing) {
  std::ostringstream os;
  os << to_string(r.method) << ',' << r.n << ',' << r.r << ',' << format_double(r.lr) << ','
     << to_string(r.constraint) << ',' << to_string(r.optimizer) << ',' << r.steps << ','
     << format_double(r.final_fit_error) << ',' << format_double(r.final_defect) << ','
     << r.param_count << ',';
  if (timing) os << format_double(r.seconds);
  os << ',' << (r.failed ? "failed" : "ok") << ',' << r.seed << ',' << r.negative_values;
  return os.str();
}

void write_csv(std::ostream& os, std::span<const RunRecord> runs, bool timing) {
  os << kCsvHeader << '\n';
  for (const auto& r : runs) os << csv_row(r, timing) << '\n';
}

}  // namespace soda
