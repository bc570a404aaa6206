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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "soda/adapters.hpp"
#include "soda/checkpoint.hpp"
#include "soda/errors.hpp"
#include "soda/harness.hpp"
#include "soda/linalg.hpp"
#include "soda/matrix_io.hpp"
#include "soda/optim.hpp"
#include "soda/verify.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

soda::Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw soda::ShapeError("expected a 2-d array, got ndim=" + std::to_string(a.ndim()));
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return soda::Matrix(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const soda::Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::list to_arrays(const std::vector<soda::Matrix>& ms) {
  py::list out;
  for (const auto& m : ms) out.append(to_array(m));
  return out;
}

py::dict record_dict(const soda::RunRecord& r) {
  return py::dict("method"_a = std::string(soda::to_string(r.method)), "n"_a = r.n, "r"_a = r.r,
                  "lr"_a = r.lr, "constraint"_a = std::string(soda::to_string(r.constraint)),
                  "optimizer"_a = std::string(soda::to_string(r.optimizer)), "steps"_a = r.steps,
                  "seed"_a = r.seed, "losses"_a = r.losses, "initial_fit_error"_a = r.initial_fit_error,
                  "final_fit_error"_a = r.final_fit_error, "final_defect"_a = r.final_defect,
                  "max_defect"_a = r.max_defect, "param_count"_a = r.param_count,
                  "negative_values"_a = r.negative_values, "failed"_a = r.failed, "failure"_a = r.failure);
}

soda::SyntheticTask make_task(const std::string& kind, std::size_t n, std::size_t samples, double noise,
                              std::uint64_t seed, std::size_t factors, bool negative_spectrum) {
  soda::SyntheticTask t;
  t.kind = soda::parse_task_kind(kind);
  t.n = n;
  t.samples = samples;
  t.noise = noise;
  t.seed = seed;
  t.factors = factors;
  t.negative_spectrum = negative_spectrum;
  return t;
}

soda::TrainConfig make_config(const std::string& method, std::size_t r, const std::string& constraint,
                              const std::string& optimizer, double lr, std::size_t steps,
                              std::size_t batch_size, double beta, bool momentum, std::uint64_t seed) {
  soda::TrainConfig c;
  c.method = soda::parse_method(method);
  c.r = r;
  c.constraint = soda::parse_constraint(constraint);
  c.optimizer = soda::parse_optimizer(optimizer);
  c.steps = steps;
  c.batch_size = batch_size;
  c.beta = beta;
  c.momentum = momentum;
  c.seed = seed;
  c = c.with_base_lr(lr);
  c.validate();
  return c;
}

// Frozen base plus adapter state, kept together so shapes always agree.
struct Adapter {
  soda::FrozenBase base;
  soda::AdapterState state;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Spectral and orthogonal adapters over a dense double matrix core.";

  py::register_exception<soda::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<soda::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<soda::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<soda::ParseError>(m, "ParseError", PyExc_ValueError);

  m.def("matmul", [](const Array& a, const Array& b) { return to_array(soda::matmul(to_matrix(a), to_matrix(b))); });
  m.def("kron", [](const Array& a, const Array& b) { return to_array(soda::kron(to_matrix(a), to_matrix(b))); });
  m.def("svd", [](const Array& w) {
    const auto d = soda::svd(to_matrix(w));
    return py::make_tuple(to_array(d.u), py::array_t<double>(py::cast(d.sigma)), to_array(d.vt));
  }, "w"_a, "Thin SVD; returns (u, sigma, vt).");
  m.def("lq", [](const Array& w) {
    const auto d = soda::lq(to_matrix(w));
    return py::make_tuple(to_array(d.l), to_array(d.q));
  }, "w"_a, "w = l @ q with l lower triangular; requires rows <= cols.");
  m.def("cayley", [](const Array& s) {
    return to_array(soda::cayley(soda::SkewSymmetric::from_lower(to_matrix(s))));
  }, "s"_a, "Cayley transform of the skew matrix built from the strict lower triangle of s.");
  m.def("orthogonality_defect", [](const Array& a) { return soda::orthogonality_defect(to_matrix(a)); });
  m.def("determinant", [](const Array& a) { return soda::determinant(to_matrix(a)); });
  m.def("stiefel_step", [](const Array& v, const Array& g, double lr) {
    soda::StiefelOptimizerState st;
    st.lr = lr;
    st.beta = 0.0;
    return to_array(soda::stiefel_step(to_matrix(v), to_matrix(g), st));
  }, "v"_a, "grad"_a, "lr"_a, "One momentum-free Riemannian step with QR retraction.");

  m.def("choose_kron_factorization", &soda::choose_kron_factorization, "n"_a, "r"_a);
  m.def("param_count", [](const std::string& method, std::size_t m_rows, std::size_t n, std::size_t r) {
    return soda::param_count(soda::parse_method(method), m_rows, n, r);
  }, "method"_a, "m"_a, "n"_a, "r"_a);
  m.def("merge", [](const Array& a, const Array& b) { return to_array(soda::merge(to_matrix(a), to_matrix(b))); });

  py::class_<Adapter>(m, "Adapter")
      .def(py::init([](const Array& w0, const std::string& method, std::size_t rank,
                       const std::string& constraint, std::uint64_t seed) {
             soda::FrozenBase base(to_matrix(w0));
             auto st = soda::init_adapter(base, soda::parse_method(method), rank,
                                          soda::parse_constraint(constraint), seed);
             return Adapter{std::move(base), std::move(st)};
           }),
           "w0"_a, "method"_a, "rank"_a, "constraint"_a = "RELU", "seed"_a = 0)
      .def_property_readonly("method", [](const Adapter& a) { return std::string(soda::to_string(a.state.method)); })
      .def_property_readonly("factor_sizes", [](const Adapter& a) { return a.state.factor_sizes; })
      .def_property_readonly("param_count", [](const Adapter& a) { return a.state.params.scalar_count(); })
      .def_property_readonly("factors", [](const Adapter& a) { return to_arrays(a.state.params.factors); })
      .def_property("delta", [](const Adapter& a) { return a.state.params.delta; },
                    [](Adapter& a, const std::vector<double>& d) {
                      if (d.size() != a.state.params.delta.size())
                        throw soda::ShapeError("delta length " + std::to_string(d.size()) + ", expected " +
                                               std::to_string(a.state.params.delta.size()));
                      a.state.params.delta = d;
                    })
      .def("weight", [](const Adapter& a) { return to_array(soda::effective_weight(a.base, a.state)); })
      .def("spectrum", [](const Adapter& a) { return soda::effective_spectrum(a.base, a.state); })
      .def("residual", [](const Adapter& a) { return to_array(soda::residual(a.base, a.state)); })
      .def("forward", [](const Adapter& a, const Array& x) {
        return to_array(soda::forward(a.base, a.state, to_matrix(x)));
      }, "x"_a)
      .def("backward", [](const Adapter& a, const Array& x, const Array& dh) {
        const auto g = soda::backward(a.base, a.state, to_matrix(x), to_matrix(dh));
        py::dict out;
        if (!g.b.empty()) out["b"] = to_array(g.b);
        if (!g.a.empty()) out["a"] = to_array(g.a);
        if (!g.blocks.empty()) out["blocks"] = to_arrays(g.blocks);
        if (!g.factors.empty()) out["factors"] = to_arrays(g.factors);
        if (!g.delta.empty()) out["delta"] = g.delta;
        return out;
      }, "x"_a, "dh"_a)
      .def("max_orthogonality_defect", [](const Adapter& a) { return soda::max_orthogonality_defect(a.state); })
      .def("save", [](const Adapter& a, const std::string& path) {
        soda::save_checkpoint(path, soda::Checkpoint{a.base.rows(), a.base.cols(), a.state});
      }, "path"_a);

  m.def("train", [](const std::string& task, const std::string& method, std::size_t n, std::size_t r,
                    const std::string& constraint, const std::string& optimizer, double lr, std::size_t steps,
                    std::size_t batch_size, double beta, bool momentum, std::uint64_t seed, double noise,
                    std::size_t task_factors, bool negative_spectrum) {
    const auto data = soda::generate_task(make_task(task, n, 8 * n, noise, seed, task_factors, negative_spectrum));
    return record_dict(soda::train(data, make_config(method, r, constraint, optimizer, lr, steps, batch_size,
                                                     beta, momentum, seed)));
  }, "task"_a = "SPECTRAL_TARGET", "method"_a = "SODA_SVD", "n"_a = 8, "r"_a = 3, "constraint"_a = "RELU",
     "optimizer"_a = "STIEFEL", "lr"_a = 1e-2, "steps"_a = 1000, "batch_size"_a = 0, "beta"_a = 0.8,
     "momentum"_a = true, "seed"_a = 0, "noise"_a = 0.0, "task_factors"_a = 3, "negative_spectrum"_a = false,
     "Train one adapter on a synthetic task; returns the run record as a dict.");

  m.def("lr_sweep", [](const std::string& task, const std::string& method, std::size_t n, std::size_t r,
                       std::vector<double> lrs, std::size_t steps, std::uint64_t seed) {
    const auto data = soda::generate_task(make_task(task, n, 8 * n, 0.0, seed, 3, false));
    const auto cfg = make_config(method, r, "RELU", "STIEFEL", 1e-2, steps, 0, 0.8, true, seed);
    if (lrs.empty()) lrs.assign(std::begin(soda::kDefaultSweepLrs), std::end(soda::kDefaultSweepLrs));
    py::list out;
    for (const auto& rec : soda::lr_sweep(data, cfg, lrs)) out.append(record_dict(rec));
    return out;
  }, "task"_a = "SPECTRAL_TARGET", "method"_a = "SODA_SVD", "n"_a = 8, "r"_a = 3,
     "lrs"_a = std::vector<double>{}, "steps"_a = 1000, "seed"_a = 0);

  m.def("csv_header", [] { return std::string(soda::kCsvHeader); });

  m.def("verify", [](std::uint64_t seed) {
    soda::verify::Options opt;
    opt.seed = seed;
    py::list out;
    for (const auto& r : soda::verify::run_all(opt)) {
      out.append(py::dict("name"_a = r.name, "passed"_a = r.passed, "measured"_a = r.measured,
                          "tolerance"_a = r.tolerance, "trials"_a = r.trials, "detail"_a = r.detail));
    }
    return out;
  }, "seed"_a = 0, "Runs the numeric self-checks; one dict per check.");
}
