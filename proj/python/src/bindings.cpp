#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "graffl/abc.hpp"
#include "graffl/error.hpp"
#include "graffl/eval.hpp"
#include "graffl/experiment.hpp"
#include "graffl/federation.hpp"
#include "graffl/gmm.hpp"
#include "graffl/suffiae.hpp"
#include "graffl/wire.hpp"

namespace py = pybind11;
using graffl::Matrix;
using json = nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw graffl::Error(graffl::ErrorCode::DimensionMismatch, "expected a 2-D array");
    const auto r = static_cast<std::size_t>(a.shape(0));
    const auto c = static_cast<std::size_t>(a.shape(1));
    return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

graffl::AbcConfig abc_config(std::size_t n, std::size_t l, std::size_t k, std::size_t dim, double spread) {
    return {n, l, k, graffl::PriorConfig::defaults(k, dim, spread), dim};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "GRAFFL native core";

    static py::exception<graffl::Error> error(m, "GrafflError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const graffl::Error& e) {
            py::object instance = py::reinterpret_borrow<py::object>(error.ptr())(e.what());
            instance.attr("code") = std::string(graffl::to_string(e.code()));
            PyErr_SetObject(error.ptr(), instance.ptr());
        }
    });

    m.def("version", &graffl::version_string);

    py::class_<graffl::RngStream>(m, "RngStream")
        .def(py::init<std::uint64_t>(), py::arg("seed"))
        .def("next_u64", &graffl::RngStream::next_u64)
        .def("uniform", &graffl::RngStream::uniform)
        .def("split", &graffl::RngStream::split, py::arg("index"));

    m.def(
        "density",
        [](const std::vector<double>& x, const std::string& params) {
            return graffl::density(x, graffl::gmm_from_json(json::parse(params)));
        },
        py::arg("x"), py::arg("params_json"));

    m.def(
        "sample",
        [](const std::string& params, std::size_t n, std::uint64_t seed) {
            graffl::RngStream rng(seed);
            const graffl::GmmSample s = graffl::sample(graffl::gmm_from_json(json::parse(params)), n, rng);
            return py::make_tuple(to_array(s.x), s.assignments);
        },
        py::arg("params_json"), py::arg("n"), py::arg("seed"));

    m.def(
        "sample_prior",
        [](std::size_t k, std::size_t dim, std::uint64_t seed, double spread) {
            graffl::RngStream rng(seed);
            return graffl::to_json(graffl::sample_prior(graffl::PriorConfig::defaults(k, dim, spread), k, rng)).dump();
        },
        py::arg("k"), py::arg("dim"), py::arg("seed"), py::arg("spread") = 1.0);

    m.def(
        "rejection_sample",
        [](const Array& observed, std::size_t n, std::size_t l, std::size_t k, std::uint64_t seed, double spread) {
            const Matrix obs = to_matrix(observed);
            graffl::RngStream rng(seed);
            py::gil_scoped_release release;
            const auto post = graffl::rejection_sample(abc_config(n, l, k, obs.cols(), spread), obs, rng);
            return graffl::to_json(post).dump();
        },
        py::arg("observed"), py::arg("n_proposals"), py::arg("n_accept"), py::arg("k"), py::arg("seed"),
        py::arg("spread") = 1.0);

    m.def(
        "federated_sample",
        [](const std::vector<Array>& sites, std::size_t n, std::size_t l, std::size_t k, std::uint64_t seed,
           double spread) {
            std::vector<Matrix> parts;
            for (const auto& s : sites) parts.push_back(to_matrix(s));
            if (parts.empty()) throw graffl::Error(graffl::ErrorCode::ConfigError, "no sites");
            const std::size_t dim = parts.front().cols();
            graffl::FederationRunConfig cfg{abc_config(n, l, k, dim, spread), {}, seed};
            for (std::size_t j = 0; j < parts.size(); ++j) {
                cfg.sites.push_back({static_cast<std::uint32_t>(j), parts[j].rows(), dim});
            }
            py::gil_scoped_release release;
            return graffl::to_json(graffl::run_inprocess(cfg, parts)).dump();
        },
        py::arg("site_summaries"), py::arg("n_proposals"), py::arg("n_accept"), py::arg("k"), py::arg("seed"),
        py::arg("spread") = 1.0);

    m.def(
        "summarize_posterior",
        [](const std::string& posterior) {
            return graffl::to_json(graffl::summarize_posterior(graffl::posterior_from_json(json::parse(posterior))))
                .dump();
        },
        py::arg("posterior_json"));

    m.def(
        "train_suffiae",
        [](const Array& x, const std::vector<int>& y, std::size_t latent_dim, std::vector<std::size_t> hidden,
           std::size_t epochs, double learning_rate, std::size_t batch_size, double noise_alpha, std::uint64_t seed) {
            const graffl::LabeledBatch data{to_matrix(x), y};
            const graffl::SuffiAEArchitecture arch{data.x.cols(), std::move(hidden), latent_dim, noise_alpha};
            graffl::RngStream rng(seed);
            graffl::RngStream init_rng = rng.split(0);
            graffl::RngStream train_rng = rng.split(1);
            graffl::SuffiAEModel model = graffl::SuffiAEModel::init(arch, init_rng);
            graffl::TrainOptions opts;
            opts.epochs = epochs;
            opts.learning_rate = learning_rate;
            opts.batch_size = batch_size;
            py::gil_scoped_release release;
            return graffl::to_json(graffl::train(std::move(model), data, opts, train_rng)).dump();
        },
        py::arg("x"), py::arg("y"), py::arg("latent_dim"), py::arg("hidden"), py::arg("epochs") = 50,
        py::arg("learning_rate") = 1e-2, py::arg("batch_size") = 32, py::arg("noise_alpha") = 0.1,
        py::arg("seed") = 0);

    m.def(
        "encode",
        [](const std::string& model, const Array& x) {
            return to_array(graffl::encode(graffl::suffiae_from_json(json::parse(model)), to_matrix(x)));
        },
        py::arg("model_json"), py::arg("x"));

    m.def(
        "auc", [](const std::vector<double>& s, const std::vector<int>& y) { return graffl::auc(s, y); },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "f1_at_cutoff",
        [](const std::vector<double>& s, const std::vector<int>& y, double c) { return graffl::f1_at_cutoff(s, y, c); },
        py::arg("scores"), py::arg("labels"), py::arg("cutoff"));
    m.def(
        "select_cutoff",
        [](const std::vector<double>& s, const std::vector<int>& y) { return graffl::select_cutoff(s, y); },
        py::arg("scores"), py::arg("labels"));

    m.def(
        "parse_site_capture",
        [](const py::bytes& capture) {
            const std::string raw = capture;
            const std::vector<std::uint8_t> bytes(raw.begin(), raw.end());
            std::vector<std::string> kinds;
            for (const auto& msg : graffl::parse_site_capture(bytes)) {
                kinds.emplace_back(std::holds_alternative<graffl::Hello>(msg) ? "hello" : "report");
            }
            return kinds;
        },
        py::arg("capture"));

    m.def(
        "run_experiment",
        [](const std::string& config, const std::string& out_dir) {
            const graffl::ExperimentConfig c = graffl::ExperimentConfig::from_json(json::parse(config));
            c.validate();
            py::gil_scoped_release release;
            const graffl::RunOutputs out = graffl::run_experiment(c, graffl::inprocess_runner(), out_dir);
            return std::make_pair(out.posterior.dump(), out.metrics_csv);
        },
        py::arg("config_json"), py::arg("out_dir"));
}
