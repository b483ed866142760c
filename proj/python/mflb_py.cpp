#include <pybind11/pybind11.h>
#include <pybind11/iostream.h>
#include <pybind11/stl.h>

#include <iostream>
#include <sstream>

#include "mflb/harness.hpp"

namespace py = pybind11;
using namespace mflb;

namespace {

py::dict spectrum_dict(const mfa::HurstSpectrum& s) {
    py::dict d;
    d["q"] = s.q_grid;
    d["h"] = s.h;
    d["r2"] = s.fit_r2;
    d["H"] = s.H;
    d["delta_h"] = s.delta_h;
    d["low_confidence"] = s.low_confidence();
    return d;
}

std::string run_scenario(const std::string& text, std::optional<std::uint64_t> seed,
                         std::optional<std::string> algorithm) {
    auto s = harness::parse_scenario(text);
    if (seed) s.seed = *seed;
    if (algorithm) {
        auto a = harness::parse_algorithm(*algorithm);
        if (!a) throw py::value_error("unknown algorithm '" + *algorithm + "'");
        s.algorithm = *a;
    }
    std::ostringstream out;
    harness::write_metrics_json(out, harness::run_scenario(s).metrics);
    return out.str();
}

py::dict compare(const std::string& text, const std::vector<std::string>& names,
                 const std::vector<std::uint64_t>& seeds) {
    const auto s = harness::parse_scenario(text);
    std::vector<harness::Algorithm> algos;
    for (const auto& n : names) {
        auto a = harness::parse_algorithm(n);
        if (!a) throw py::value_error("unknown algorithm '" + n + "'");
        algos.push_back(*a);
    }
    const auto table = harness::compare_algorithms(s, algos, seeds);
    py::dict out;
    for (const auto& row : table.rows) {
        py::dict metrics;
        for (const auto& [name, m] : row.metrics) metrics[py::str(name)] = py::make_tuple(m.mean, m.stddev);
        py::dict entry;
        entry["metrics"] = metrics;
        entry["jain_wins"] = row.jain_wins;
        entry["loss_wins"] = row.loss_wins;
        entry["arrival_digests"] = row.arrival_digests;
        out[py::str(std::string(harness::to_string(row.algorithm)))] = entry;
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "C++ core of the mflb package";

    m.def("gen_fgn", [](double hurst, std::size_t n, double sigma, std::uint64_t seed) {
        return traffic::gen_fgn(hurst, n, sigma, seed).values;
    }, py::arg("hurst"), py::arg("n"), py::arg("sigma") = 1.0, py::arg("seed") = 0);

    m.def("gen_binomial_cascade", [](double a, int depth, bool randomize, std::uint64_t seed) {
        return traffic::gen_binomial_cascade(a, depth, randomize, seed).values;
    }, py::arg("a"), py::arg("depth"), py::arg("randomize") = false, py::arg("seed") = 0);

    m.def("analytic_binomial_h", &traffic::analytic_binomial_h, py::arg("a"), py::arg("q"));

    m.def("window_count", [](std::size_t len, std::size_t T, std::size_t shift) {
        const mfa::WindowConfig cfg{T, shift};
        cfg.validate();
        return mfa::window_count(len, cfg);
    }, py::arg("length"), py::arg("T"), py::arg("shift"));

    m.def("sliding_window_starts", [](std::size_t len, std::size_t T, std::size_t shift) {
        const mfa::WindowConfig cfg{T, shift};
        const std::vector<double> zeros(len, 0.0);
        std::vector<std::size_t> starts;
        for (const auto& w : mfa::sliding_windows(zeros, cfg)) starts.push_back(w.start);
        return starts;
    }, py::arg("length"), py::arg("T"), py::arg("shift"));

    m.def("fit_loglog", [](const std::vector<std::pair<double, double>>& pts) {
        const auto f = mfa::fit_loglog(pts);
        return py::make_tuple(f.slope, f.intercept, f.r2);
    }, py::arg("points"));

    m.def("mfdfa", [](const std::vector<double>& series, std::optional<std::vector<double>> q,
                      std::optional<std::vector<std::size_t>> scales, int order) {
        auto cfg = mfa::MfdfaConfig::defaults(series.size());
        if (q) cfg.q_grid = *q;
        if (scales) cfg.scales = *scales;
        cfg.order = order;
        return spectrum_dict(mfa::mfdfa(series, cfg));
    }, py::arg("series"), py::arg("q") = py::none(), py::arg("scales") = py::none(), py::arg("order") = 1);

    m.def("effective_bandwidth", &balancer::effective_bandwidth, py::arg("m"), py::arg("a"), py::arg("H"),
          py::arg("x"), py::arg("eps"), py::arg("delta_h") = py::none(), py::arg("gamma") = 0.5);

    m.def("forecast_util", [](const std::vector<std::tuple<double, double, double>>& history, double alpha) {
        std::vector<balancer::UtilSample> h;
        for (std::size_t i = 0; i < history.size(); ++i) {
            const auto& [p, mem, d] = history[i];
            h.push_back({static_cast<double>(i), {p, mem, d}});
        }
        const auto f = balancer::forecast_util(h, alpha);
        return py::make_tuple(f.u.cpu, f.u.mem, f.u.disk);
    }, py::arg("history"), py::arg("alpha"));

    m.def("jain_index", [](const std::vector<double>& x) { return harness::jain_index(x); }, py::arg("x"));

    m.def("run_scenario", &run_scenario, py::arg("scenario"), py::arg("seed") = py::none(),
          py::arg("algorithm") = py::none());
    m.def("compare", &compare, py::arg("scenario"), py::arg("algorithms"), py::arg("seeds"));

    m.def("cli", [](const std::vector<std::string>& args) {
        py::scoped_ostream_redirect out(std::cout, py::module_::import("sys").attr("stdout"));
        py::scoped_ostream_redirect err(std::cerr, py::module_::import("sys").attr("stderr"));
        return harness::cli(args, std::cout, std::cerr);
    }, py::arg("args"));
}
