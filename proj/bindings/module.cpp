// Python bindings for the config-driven trainer plus the handful of
// primitives that are useful from a notebook: log-domain weights, resampling,
// snapshots, and dataset generation.

#include "pbnn/config.hpp"
#include "pbnn/models.hpp"
#include "pbnn/particles.hpp"
#include "pbnn/runner.hpp"
#include "pbnn/util.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <random>

namespace py = pybind11;
using namespace pbnn;

namespace {

config::RunConfig config_of(const std::string& text, const std::vector<std::string>& overrides) {
  config::SectionMap sections = config::parse_sections(text);
  config::apply_overrides(sections, overrides);
  return config::config_from_sections(sections);
}

} // namespace

PYBIND11_MODULE(_pbnn, m) {
  m.doc() = "Sequential Monte Carlo training for partially Bayesian networks";

  py::register_exception<config::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<particles::WeightCollapse>(m, "WeightCollapse", PyExc_RuntimeError);

  // --- log-domain primitives -------------------------------------------------

  m.def(
      "logsumexp", [](const Eigen::VectorXd& v) { return logsumexp(v); },
      py::arg("values"), "log(sum(exp(values))), overflow-safe");
  m.def(
      "ess", [](const Eigen::VectorXd& lw) { return particles::ess(lw); },
      py::arg("log_weights"), "Effective sample size 1/sum(w^2) of normalized log-weights");
  m.def(
      "resample_indices",
      [](const Eigen::VectorXd& weights, long n_out, const std::string& scheme,
         std::uint64_t seed) {
        std::mt19937_64 eng(seed);
        return particles::resample_indices(weights, n_out, particles::scheme_from_name(scheme),
                                           eng);
      },
      py::arg("weights"), py::arg("n_out"), py::arg("scheme") = "STRATIFIED",
      py::arg("seed") = 0, "Ancestor indices for one resampling draw");

  py::class_<particles::Ensemble>(m, "Ensemble", "Weighted particle cloud (log-domain weights)")
      .def_readonly("positions", &particles::Ensemble::positions)
      .def_readonly("log_weights", &particles::Ensemble::log_weights)
      .def_readonly("log_evidence", &particles::Ensemble::log_evidence)
      .def_property_readonly("n", &particles::Ensemble::n)
      .def_property_readonly("dim", &particles::Ensemble::dim)
      .def_property_readonly(
          "ess", [](const particles::Ensemble& e) { return particles::ess(e.log_weights); })
      .def("__repr__", [](const particles::Ensemble& e) {
        return "Ensemble(n=" + std::to_string(e.n()) + ", dim=" + std::to_string(e.dim()) +
               ", log_evidence=" + std::to_string(e.log_evidence) + ")";
      });

  m.def("load_snapshot", &particles::load_snapshot, py::arg("path"),
        "Read an ensemble.csv snapshot");
  m.def("save_snapshot", &particles::save_snapshot, py::arg("path"), py::arg("ensemble"));

  // --- config handling -------------------------------------------------------

  m.def(
      "canonical_config",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        return config::canonical_text(config_of(text, overrides));
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{},
      "Resolved config text with every default filled in");
  m.def(
      "config_hash",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        return config::config_hash_hex(config_of(text, overrides));
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{},
      "16-hex-char problem hash; seeds/output/threads do not participate");

  // --- training and results --------------------------------------------------

  m.def(
      "run_text",
      [](const std::string& text, const std::vector<std::string>& overrides,
         bool parallel_seeds) {
        const config::RunConfig cfg = config_of(text, overrides);
        py::gil_scoped_release release;
        return runner::run(cfg, parallel_seeds, &std::cerr);
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{},
      py::arg("parallel_seeds") = false,
      "Train every configured seed; returns the process exit code (0 ok, 3 on a "
      "failed seed), writing metrics/trace files under run.output_dir");
  m.def(
      "run_file",
      [](const std::string& path, const std::vector<std::string>& overrides,
         bool parallel_seeds) {
        const config::RunConfig cfg = config::load_config_file(path, overrides);
        py::gil_scoped_release release;
        return runner::run(cfg, parallel_seeds, &std::cerr);
      },
      py::arg("path"), py::arg("overrides") = std::vector<std::string>{},
      py::arg("parallel_seeds") = false, "run_text, but reading the config from a file");

  m.def("summary", &runner::summary_csv, py::arg("output_dir"),
        "Aggregate mean (std) table over every metrics.json below output_dir, as CSV text");
  m.def("seed_table", &runner::seeds_csv, py::arg("output_dir"),
        "Per-seed metric table over every metrics.json below output_dir, as CSV text");

  m.def("gen_data", &runner::gen_data, py::arg("experiment"), py::arg("seed"),
        py::arg("out_csv"), py::arg("n") = 100, py::arg("noise_std") = 0.3,
        "Write one experiment's dataset as CSV (regression/moons carry a split column)");

  m.def("regression_truth", &models::regression_truth, py::arg("x"),
        "Noiseless regression target x*sin(x*tanh(x))");
}
