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

#include "soda/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "soda/adapters.hpp"
#include "soda/checkpoint.hpp"
#include "soda/errors.hpp"
#include "soda/linalg.hpp"
#include "soda/matrix_io.hpp"
#include "soda/verify.hpp"

namespace soda::cli {

namespace {

constexpr KeyInfo kKeys[] = {
    {"method", "adapter method: LORA, OFT, OFT_SHARED, KOFT, SVDIFF, SODA_SVD, SODA_QR"},
    {"r", "LoRA rank, OFT block count, or Kronecker factor count"},
    {"constraint", "spectral constraint: RELU, SOFTPLUS, NONE"},
    {"optimizer", "orthogonal-factor optimizer: STIEFEL, CAYLEY"},
    {"lr", "base learning rate (rotation = lr, spectral = 10*lr, euclidean = lr)"},
    {"lr_rotation", "learning rate for orthogonal factors"},
    {"lr_spectral", "learning rate for spectral shifts"},
    {"lr_euclidean", "learning rate for LoRA factors"},
    {"lrs", "comma-separated base learning rates for sweeps and ablations"},
    {"beta", "momentum coefficient in [0, 1)"},
    {"momentum", "enable momentum (true/false)"},
    {"steps", "optimization steps"},
    {"batch_size", "mini-batch size, 0 for full batch"},
    {"seed", "random seed"},
    {"task", "MATRIX_REGRESSION, ROTATED_TARGET, SPECTRAL_TARGET, COMPOSED_TARGET"},
    {"n", "layer dimension"},
    {"samples", "number of training samples"},
    {"noise", "target noise standard deviation"},
    {"task_factors", "Kronecker factor count of planted rotations"},
    {"rotation_strength", "std-dev of planted rotation generators"},
    {"spectral_strength", "relative std-dev of planted spectral shifts"},
    {"negative_spectrum", "flip the sign of one planted singular value (true/false)"},
    {"suite_size", "number of seeded tasks per ablation"},
    {"timing", "write wall-clock seconds into the CSV (true/false)"},
    {"out", "CSV output path"},
    {"save_checkpoint", "write the trained adapter checkpoint here"},
    {"save_base", "write the frozen base weight here"},
    {"save_residual", "write the trained residual weight here"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_real(std::string_view key, const std::string& v) {
  double x = 0.0;
  const char* first = v.data();
  if (!v.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + v + "'");
  }
  return x;
}

std::uint64_t parse_uint(std::string_view key, const std::string& v, std::uint64_t lo,
                         std::uint64_t hi) {
  std::uint64_t x = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a nonnegative integer, got '" + v + "'");
  }
  if (x < lo || x > hi) {
    throw ConfigError(std::string(key) + ": " + v + " is outside [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
  }
  return x;
}

bool parse_bool(std::string_view key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + v + "'");
}

double positive_real(std::string_view key, const std::string& v) {
  const double x = parse_real(key, v);
  if (!(x > 0.0)) throw ConfigError(std::string(key) + ": must be positive, got '" + v + "'");
  return x;
}

double nonnegative_real(std::string_view key, const std::string& v) {
  const double x = parse_real(key, v);
  if (!(x >= 0.0)) throw ConfigError(std::string(key) + ": must be nonnegative, got '" + v + "'");
  return x;
}

// Writes the CSV either to the configured file or to `out`. Returns the
// stream the summary line should go to.
std::ostream& emit_csv(const RunSetup& s, std::span<const RunRecord> runs, std::ostream& out) {
  if (s.out) {
    std::ofstream f(*s.out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + s.out->string() + "'");
    write_csv(f, runs, s.timing);
    return out;
  }
  write_csv(out, runs, s.timing);
  return std::cerr;
}

std::string summary(const RunRecord& r) {
  std::ostringstream os;
  os << "method=" << to_string(r.method) << " n=" << r.n << " r=" << r.r
     << " lr=" << format_double(r.lr) << " steps=" << r.steps
     << " final_fit_error=" << format_double(r.final_fit_error)
     << " final_defect=" << format_double(r.final_defect) << " params=" << r.param_count
     << " status=" << (r.failed ? "failed" : "ok");
  if (r.failed) os << " (" << r.failure << ')';
  return os.str();
}

}  // namespace

std::span<const KeyInfo> known_keys() { return kKeys; }

void CliConfig::set(std::string_view key, std::string value) {
  const bool known = std::any_of(std::begin(kKeys), std::end(kKeys),
                                 [&](const KeyInfo& k) { return k.name == key; });
  if (!known) throw ConfigError("unknown configuration key '" + std::string(key) + "'");
  values_.insert_or_assign(std::string(key), std::move(value));
}

void CliConfig::parse_text(std::string_view text, bool overwrite) {
  std::istringstream is{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!overwrite && has(key)) {
      // Still reject unknown keys even when a flag already set the value.
      set(key, *get(key));
      continue;
    }
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void CliConfig::load_file(const std::filesystem::path& path, bool overwrite) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  parse_text(ss.str(), overwrite);
}

bool CliConfig::has(std::string_view key) const { return values_.find(key) != values_.end(); }

std::optional<std::string> CliConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

RunSetup resolve(const CliConfig& cfg) {
  RunSetup s;
  auto& t = s.train;
  auto& task = s.task;
  auto val = [&](std::string_view k) { return cfg.get(k); };

  if (auto v = val("method")) t.method = parse_method(*v);
  if (auto v = val("r")) t.r = parse_uint("r", *v, 1, 64);
  if (auto v = val("constraint")) t.constraint = parse_constraint(*v);
  if (auto v = val("optimizer")) t.optimizer = parse_optimizer(*v);
  if (auto v = val("lr")) t = t.with_base_lr(positive_real("lr", *v));
  if (auto v = val("lr_rotation")) t.lr_rotation = positive_real("lr_rotation", *v);
  if (auto v = val("lr_spectral")) t.lr_spectral = positive_real("lr_spectral", *v);
  if (auto v = val("lr_euclidean")) t.lr_euclidean = positive_real("lr_euclidean", *v);
  if (auto v = val("beta")) {
    t.beta = parse_real("beta", *v);
    if (!(t.beta >= 0.0 && t.beta < 1.0)) throw ConfigError("beta: must lie in [0, 1), got '" + *v + "'");
  }
  if (auto v = val("momentum")) t.momentum = parse_bool("momentum", *v);
  if (auto v = val("steps")) t.steps = parse_uint("steps", *v, 0, 10'000'000);
  if (auto v = val("batch_size")) t.batch_size = parse_uint("batch_size", *v, 0, 1'000'000);
  if (auto v = val("seed")) t.seed = parse_uint("seed", *v, 0, UINT64_MAX);

  task.seed = t.seed;
  if (auto v = val("task")) task.kind = parse_task_kind(*v);
  if (auto v = val("n")) task.n = parse_uint("n", *v, 1, 1024);
  if (auto v = val("samples")) task.samples = parse_uint("samples", *v, 1, 1'000'000);
  else task.samples = 8 * task.n;
  if (auto v = val("noise")) task.noise = nonnegative_real("noise", *v);
  if (auto v = val("task_factors")) task.factors = parse_uint("task_factors", *v, 1, 64);
  if (auto v = val("rotation_strength")) task.rotation_strength = nonnegative_real("rotation_strength", *v);
  if (auto v = val("spectral_strength")) task.spectral_strength = nonnegative_real("spectral_strength", *v);
  if (auto v = val("negative_spectrum")) task.negative_spectrum = parse_bool("negative_spectrum", *v);

  s.lrs.assign(std::begin(kDefaultSweepLrs), std::end(kDefaultSweepLrs));
  if (auto v = val("lrs")) {
    s.lrs.clear();
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) s.lrs.push_back(positive_real("lrs", trim(item)));
    if (s.lrs.empty()) throw ConfigError("lrs: expected at least one learning rate");
  }
  if (auto v = val("suite_size")) s.suite_size = parse_uint("suite_size", *v, 1, 1000);
  if (auto v = val("timing")) s.timing = parse_bool("timing", *v);
  if (auto v = val("out")) s.out = *v;
  if (auto v = val("save_checkpoint")) s.save_checkpoint = *v;
  if (auto v = val("save_base")) s.save_base = *v;
  if (auto v = val("save_residual")) s.save_residual = *v;

  t.validate();
  // Shape problems (OFT divisibility, impossible factorizations) surface before any compute.
  (void)param_count(t.method, task.n, task.n, t.r);
  if (task.kind == TaskKind::kRotatedTarget || task.kind == TaskKind::kComposedTarget) {
    (void)choose_kron_factorization(task.n, task.factors);
  }
  return s;
}

int cmd_decompose(const std::filesystem::path& input, std::string_view mode,
                  const std::filesystem::path& out_prefix, std::ostream& out) {
  const Matrix w = load_matrix(input);
  auto path = [&](const char* suffix) {
    return std::filesystem::path(out_prefix.string() + suffix);
  };
  const double scale = 1.0 + frobenius_norm(w);
  if (mode == "svd") {
    const SpectralDecomposition d = svd(w);
    save_matrix(path(".u.txt"), d.u);
    save_matrix(path(".sigma.txt"), Matrix(1, d.sigma.size(), d.sigma));
    save_matrix(path(".vt.txt"), d.vt);
    out << "sigma:";
    for (double s : d.sigma) out << ' ' << format_double(s);
    out << "\nreconstruction_residual: " << format_double(frobenius_norm(d.reconstruct() - w))
        << " (tolerance " << format_double(1e-8 * scale) << ")\n";
    return kExitOk;
  }
  if (mode == "lq") {
    const TriangularDecomposition d = lq(w);
    save_matrix(path(".l.txt"), d.l);
    save_matrix(path(".q.txt"), d.q);
    out << "l_diagonal:";
    for (double s : d.l.diag()) out << ' ' << format_double(s);
    out << "\nreconstruction_residual: " << format_double(frobenius_norm(d.reconstruct() - w))
        << " (tolerance " << format_double(1e-8 * scale) << ")\n";
    return kExitOk;
  }
  throw ConfigError("decompose mode must be 'svd' or 'lq', got '" + std::string(mode) + "'");
}

int cmd_train(const RunSetup& s, std::ostream& out) {
  const TaskData data = generate_task(s.task);
  TrainedAdapter trained = train_adapter(data, s.train);
  const FrozenBase base(data.w0);
  if (s.save_checkpoint) save_checkpoint(*s.save_checkpoint, {data.w0.rows(), data.w0.cols(), trained.state});
  if (s.save_base) save_matrix(*s.save_base, data.w0);
  if (s.save_residual) save_matrix(*s.save_residual, residual(base, trained.state));
  std::ostream& sum = emit_csv(s, std::span(&trained.record, 1), out);
  sum << summary(trained.record) << '\n';
  return kExitOk;
}

int cmd_sweep(const RunSetup& s, std::ostream& out) {
  const TaskData data = generate_task(s.task);
  const auto runs = lr_sweep(data, s.train, s.lrs);
  std::ostream& sum = emit_csv(s, runs, out);
  sum << "best: " << summary(best_run(runs)) << '\n';
  return kExitOk;
}

int cmd_ablate(std::string_view name, const RunSetup& s, std::ostream& out) {
  std::vector<SyntheticTask> suite;
  for (std::size_t i = 0; i < s.suite_size; ++i) {
    SyntheticTask t = s.task;
    t.seed = s.task.seed + i;
    suite.push_back(t);
  }
  AblationOptions opt;
  opt.base = s.train;
  opt.lrs = s.lrs;
  AblationReport report;
  if (name == "spectral_vs_orthogonal") {
    report = ablation_spectral_vs_orthogonal(suite, opt);
  } else if (name == "constraint") {
    report = ablation_constraint(suite, opt);
  } else if (name == "optimizer") {
    report = ablation_optimizer(suite, opt);
  } else {
    std::string valid;
    for (auto n : kAblationNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
    throw ConfigError("unknown ablation '" + std::string(name) + "'; valid names: " + valid);
  }
  std::vector<RunRecord> runs;
  for (const auto& row : report.rows) runs.push_back(row.record);
  std::ostream& sum = emit_csv(s, runs, out);

  std::vector<std::string> variants;
  for (const auto& row : report.rows)
    if (std::find(variants.begin(), variants.end(), row.variant) == variants.end())
      variants.push_back(row.variant);
  sum << "ablation " << report.name << ':';
  for (const auto& v : variants) {
    double total = 0.0;
    for (std::size_t t = 0; t < suite.size(); ++t) total += report.best_error(t, v);
    sum << ' ' << v << "=" << format_double(total / static_cast<double>(suite.size()));
  }
  sum << " (mean best-of-sweep fit error)\n";
  return kExitOk;
}

int cmd_params(std::size_t n, std::size_t r, std::ostream& out) {
  if (n == 0 || r == 0) throw ConfigError("params: n and r must be positive");
  struct Row {
    const char* name;
    Method method;
    const char* formula;
  };
  const Row rows[] = {{"LORA", Method::kLora, "2*n*r"},
                      {"OFT", Method::kOft, "n^2/r"},
                      {"OFT_SHARED", Method::kOftShared, "n^2/r^2"},
                      {"KOFT", Method::kKoft, "r*n^(2/r)"},
                      {"SODA", Method::kSodaSvd, "n+r*n^(2/r)"}};
  out << "method,formula,params,note\n";
  for (const auto& row : rows) {
    out << row.name << ',' << row.formula << ',';
    try {
      const std::size_t count = param_count(row.method, n, n, r);
      std::string note;
      if (uses_kronecker(row.method)) {
        const auto sizes = choose_kron_factorization(n, r);
        const bool even = std::all_of(sizes.begin(), sizes.end(),
                                      [&](std::size_t x) { return x == sizes.front(); });
        if (!even) {
          note = "uneven factors";
          for (std::size_t i = 0; i < sizes.size(); ++i) note += (i ? "x" : " ") + std::to_string(sizes[i]);
          note += "; exact count";
        }
      }
      out << count << ',' << note << '\n';
    } catch (const ConfigError& e) {
      out << "n/a," << e.what() << '\n';
    }
  }
  return kExitOk;
}

int cmd_merge(const std::filesystem::path& ckpt1, const std::filesystem::path& ckpt2,
              const std::filesystem::path& base_path, const std::filesystem::path& out_prefix,
              std::ostream& out) {
  const FrozenBase base(load_matrix(base_path));
  const Checkpoint c1 = load_checkpoint(ckpt1);
  const Checkpoint c2 = load_checkpoint(ckpt2);
  for (const auto* c : {&c1, &c2}) {
    try {
      check_compatible(*c, base);
    } catch (const std::exception& e) {
      throw ShapeError(std::string(c == &c1 ? ckpt1.string() : ckpt2.string()) +
                       " is incompatible with the base: " + e.what());
    }
  }
  const Matrix merged = merge(residual(base, c1.state), residual(base, c2.state));
  const Matrix weight = base.w0() + merged;
  save_matrix(out_prefix.string() + ".weight.txt", weight);
  save_matrix(out_prefix.string() + ".residual.txt", merged);
  out << "merged " << to_string(c1.state.method) << " + " << to_string(c2.state.method)
      << ": residual_norm=" << format_double(frobenius_norm(merged)) << '\n';
  return kExitOk;
}

int cmd_verify(std::uint64_t seed, bool inject_failure, std::ostream& out) {
  verify::Options opt;
  opt.seed = seed;
  if (inject_failure) opt.kron = verify::corrupted_kron;
  bool ok = true;
  for (const auto& r : verify::run_all(opt)) {
    out << verify::format_line(r) << '\n';
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitFailure;
}

namespace {

struct KeyFlags {
  std::map<std::string, std::string> values;

  void attach(CLI::App& app) {
    for (const auto& k : kKeys) {
      const std::string name(k.name);
      if (name == "seed" || name == "out") continue;
      app.add_option("--" + name, values[name], std::string(k.help));
    }
  }
};

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"soda: spectral and orthogonal adapters on synthetic tasks"};
  app.require_subcommand(1);

  std::string config_path;
  std::string seed_flag;
  std::string out_flag;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--seed", seed_flag, "random seed");
    sub->add_option("--out", out_flag, "CSV output path");
  };

  std::string input, mode = "svd", prefix;
  auto* decompose = app.add_subcommand("decompose", "factor a matrix file (svd or lq)");
  decompose->add_option("input", input, "matrix file")->required();
  decompose->add_option("--mode", mode, "svd or lq");
  decompose->add_option("--prefix,-o", prefix, "output prefix (default: input path)");

  KeyFlags train_flags, sweep_flags, ablate_flags;
  auto* train_cmd = app.add_subcommand("train", "train one adapter and write a CSV record");
  add_common(train_cmd);
  train_flags.attach(*train_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep", "learning-rate sweep");
  add_common(sweep_cmd);
  sweep_flags.attach(*sweep_cmd);
  std::string ablation;
  auto* ablate_cmd = app.add_subcommand("ablate", "run a named ablation over a seeded task suite");
  ablate_cmd->add_option("name", ablation, "spectral_vs_orthogonal, constraint or optimizer")->required();
  add_common(ablate_cmd);
  ablate_flags.attach(*ablate_cmd);

  std::size_t pn = 0, pr = 0;
  auto* params = app.add_subcommand("params", "trainable parameter counts per method");
  params->add_option("n", pn, "layer dimension")->required();
  params->add_option("r", pr, "rank / block count / factor count")->required();

  std::string ck1, ck2, base_path, merge_prefix;
  auto* merge_cmd = app.add_subcommand("merge", "sum the residuals of two checkpoints onto a base");
  merge_cmd->add_option("checkpoint1", ck1)->required();
  merge_cmd->add_option("checkpoint2", ck2)->required();
  merge_cmd->add_option("base", base_path, "base weight matrix file")->required();
  merge_cmd->add_option("--out,-o", merge_prefix, "output prefix")->required();

  std::uint64_t verify_seed = 0;
  bool inject = false;
  auto* verify_cmd = app.add_subcommand("verify", "run the numerical self-checks");
  verify_cmd->add_option("--seed", verify_seed, "random seed");
  verify_cmd->add_flag("--inject-failure", inject, "use a corrupted Kronecker product");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  auto setup_for = [&](CLI::App* sub, KeyFlags& flags) {
    CliConfig cfg;
    for (const auto& [k, v] : flags.values) {
      if (sub->count("--" + k) > 0) cfg.set(k, v);
    }
    if (!seed_flag.empty()) cfg.set("seed", seed_flag);
    if (!out_flag.empty()) cfg.set("out", out_flag);
    if (!config_path.empty()) cfg.load_file(config_path, false);
    return resolve(cfg);
  };

  try {
    if (decompose->parsed()) {
      return cmd_decompose(input, mode, prefix.empty() ? input : prefix, out);
    }
    if (train_cmd->parsed()) return cmd_train(setup_for(train_cmd, train_flags), out);
    if (sweep_cmd->parsed()) return cmd_sweep(setup_for(sweep_cmd, sweep_flags), out);
    if (ablate_cmd->parsed()) {
      if (std::find(std::begin(kAblationNames), std::end(kAblationNames), ablation) ==
          std::end(kAblationNames)) {
        std::string valid;
        for (auto n : kAblationNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
        err << "error: unknown ablation '" << ablation << "'; valid names: " << valid << '\n';
        return kExitUsage;
      }
      return cmd_ablate(ablation, setup_for(ablate_cmd, ablate_flags), out);
    }
    if (params->parsed()) return cmd_params(pn, pr, out);
    if (merge_cmd->parsed()) return cmd_merge(ck1, ck2, base_path, merge_prefix, out);
    if (verify_cmd->parsed()) return cmd_verify(verify_seed, inject, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace soda::cli
