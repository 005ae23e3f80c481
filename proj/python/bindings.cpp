#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <limits>

#include "sforge/datagen.hpp"
#include "sforge/errors.hpp"
#include "sforge/harness.hpp"
#include "sforge/lattice.hpp"
#include "sforge/mlp.hpp"
#include "sforge/scalestats.hpp"
#include "sforge/spinsim.hpp"

namespace py = pybind11;
using namespace sforge;

namespace {

py::array_t<float> image_array(const std::vector<float>& px, int h, int w) {
    py::array_t<float> a({h, w});
    std::copy(px.begin(), px.end(), a.mutable_data());
    return a;
}

std::vector<FitPoint> points(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("x and y differ in length");
    std::vector<FitPoint> p;
    for (std::size_t i = 0; i < x.size(); ++i) p.push_back({x[i], y[i]});
    return p;
}

py::dict power_law_dict(const PowerLawFit& f) {
    py::dict d;
    d["alpha"] = f.alpha;
    d["alpha_err"] = f.alpha_err;
    d["log_prefactor"] = f.log_prefactor;
    d["log_prefactor_err"] = f.log_prefactor_err;
    d["r2"] = f.r2;
    d["n_points"] = f.n_points;
    return d;
}

py::dict grid_dict(const GridOutcome& g) {
    py::dict d;
    d["total_cells"] = g.total_cells;
    d["skipped"] = g.skipped;
    d["completed"] = g.completed;
    d["failed"] = g.failed;
    d["status"] = status_name(g.status);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Moire spin textures, MLP training and scaling-law statistics";

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<DegenerateDataError>(m, "DegenerateDataError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

    m.def("commensurate_angle", [](int mi) { return commensurate_angle(MoireIndex::checked(mi)); }, py::arg("m"));
    m.def("sites_per_layer", [](int mi) { return sites_per_layer(MoireIndex::checked(mi)); }, py::arg("m"));
    m.def("param_count", [](std::size_t n_i, std::size_t n_l, std::size_t n_n) { return param_count({n_i, n_l, n_n}); },
          py::arg("n_i") = 20000, py::arg("n_l"), py::arg("n_n"));

    m.def(
        "ground_state",
        [](int mi, double J, double D, std::uint64_t seed, bool monolayer) {
            const auto g = monolayer ? build_monolayer(MoireIndex::checked(mi)) : build_superlattice(MoireIndex::checked(mi), {});
            SolverConfig cfg;
            cfg.seed = seed;
            const auto r = ground_state(g, {J, D}, cfg);
            py::dict d;
            d["energy"] = r.energy;
            d["converged"] = r.converged;
            d["mean_sz_top"] = layer_mean_sz(g, r.state, Layer::top);
            d["top"] = image_array(rasterize(g, r.state, Layer::top).pixels, kImageSize, kImageSize);
            if (!monolayer) {
                d["mean_sz_bottom"] = layer_mean_sz(g, r.state, Layer::bottom);
                d["bottom"] = image_array(rasterize(g, r.state, Layer::bottom).pixels, kImageSize, kImageSize);
            }
            return d;
        },
        py::arg("m"), py::arg("J"), py::arg("D"), py::arg("seed") = 1, py::arg("monolayer") = false);

    m.def(
        "generate_dataset",
        [](const std::filesystem::path& out, std::size_t count, std::uint64_t seed, std::vector<int> m_choices,
           std::size_t threads) {
            GenerateOptions o;
            o.count = count;
            o.master_seed = seed;
            for (int mi : m_choices) o.m_choices.push_back(MoireIndex::checked(mi));
            o.threads = threads;
            py::gil_scoped_release release;
            return generate_dataset(o, out).to_json();
        },
        py::arg("out"), py::arg("count"), py::arg("seed") = 1, py::arg("m_choices") = std::vector<int>{},
        py::arg("threads") = 1);

    m.def(
        "read_dataset",
        [](const std::filesystem::path& path) {
            const Dataset d = read_dataset(path);
            const auto n = static_cast<py::ssize_t>(d.size());
            py::array_t<float> x({n, py::ssize_t{2}, py::ssize_t{d.height()}, py::ssize_t{d.width()}});
            py::array_t<double> y({n, py::ssize_t{3}});
            auto px = d.all_pixels();
            std::copy(px.begin(), px.end(), x.mutable_data());
            auto yl = y.mutable_unchecked<2>();
            for (py::ssize_t k = 0; k < n; ++k) {
                const auto& l = d.labels(static_cast<std::size_t>(k));
                yl(k, 0) = l.theta_deg;
                yl(k, 1) = l.J;
                yl(k, 2) = l.D;
            }
            return py::make_tuple(x, y);
        },
        py::arg("path"), "Returns (images[n, 2, 100, 100], labels[n, 3] as theta, J, D).");

    m.def(
        "summarize",
        [](const std::vector<double>& losses) {
            const auto r = summarize(losses);
            py::dict d;
            d["arith_mean"] = r.arith_mean;
            d["arith_se"] = r.arith_se;
            d["geo_mean"] = r.geo_mean;
            d["geo_se"] = r.geo_se;
            d["median"] = r.median;
            d["mad"] = r.mad;
            d["n"] = r.n;
            return d;
        },
        py::arg("losses"));

    m.def(
        "bootstrap_geomean",
        [](const std::vector<double>& losses, std::size_t n_subsets, std::size_t subset_size, std::uint64_t seed) {
            const auto r = bootstrap_geomean(losses, n_subsets, subset_size, seed);
            return py::make_tuple(r.mean, r.std);
        },
        py::arg("losses"), py::arg("n_subsets"), py::arg("subset_size"), py::arg("seed") = 1);

    m.def(
        "fit_power_law",
        [](const std::vector<double>& x, const std::vector<double>& y, double x_min, double x_max) {
            return power_law_dict(fit_power_law(points(x, y), {x_min, x_max, 0.0}));
        },
        py::arg("x"), py::arg("y"), py::arg("x_min") = 0.0,
        py::arg("x_max") = std::numeric_limits<double>::infinity());

    m.def(
        "fit_log_linear",
        [](const std::vector<double>& x, const std::vector<double>& y) {
            const auto f = fit_log_linear(points(x, y));
            py::dict d;
            d["a"] = f.a;
            d["a_err"] = f.a_err;
            d["b"] = f.b;
            d["b_err"] = f.b_err;
            d["n_points"] = f.n_points;
            return d;
        },
        py::arg("x"), py::arg("y"));

    m.def(
        "run_grid",
        [](const std::filesystem::path& manifest, const std::filesystem::path& store, std::optional<std::size_t> max_cells) {
            const auto man = load_manifest(manifest);
            GridOptions o;
            o.max_new_cells = max_cells;
            GridOutcome g;
            {
                py::gil_scoped_release release;
                g = run_grid(man, store, o);
            }
            return grid_dict(g);
        },
        py::arg("manifest"), py::arg("store"), py::arg("max_cells") = py::none());

    m.def(
        "ingest",
        [](const std::filesystem::path& csv, const std::filesystem::path& store) {
            auto s = ResultsStore::open(store);
            const auto r = ingest_external(csv, s);
            return py::make_tuple(r.accepted, r.rejected);
        },
        py::arg("csv"), py::arg("store"), "Returns (accepted count, rejected 'line N: reason' messages).");

    m.def(
        "report",
        [](const std::filesystem::path& store, const std::filesystem::path& manifest, const std::filesystem::path& out) {
            const auto b = report(ResultsStore::open(store), load_manifest(manifest), out);
            py::dict alpha;
            for (const auto& r : b.alpha_d) {
                if (r.fit) alpha[py::str(r.label)] = power_law_dict(*r.fit);
            }
            return alpha;
        },
        py::arg("store"), py::arg("manifest"), py::arg("out"), "Writes report files; returns alpha_D fits by arch_id.");
}
