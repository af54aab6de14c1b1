#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <optional>

#include "titan/app.hpp"
#include "titan/bounds.hpp"
#include "titan/config.hpp"
#include "titan/io.hpp"
#include "titan/matching.hpp"
#include "titan/metrics.hpp"
#include "titan/partition.hpp"
#include "titan/synth.hpp"

namespace py = pybind11;
using namespace titan;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

// Strings pass through untouched; everything else goes via its JSON text, which
// apply_override also accepts.
std::string override_text(const py::handle& v) {
    if (py::isinstance<py::str>(v)) return v.cast<std::string>();
    if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
    return from_py(v).dump();
}

py::dict run(const std::string& command, const py::dict& overrides, std::optional<std::string> config_file,
             std::optional<std::string> manifest, bool verbose) {
    ConfigSources src;
    if (config_file) src.config_file = *config_file;
    if (manifest) src.manifest_file = *manifest;
    for (const auto& [k, v] : overrides) src.overrides.emplace_back(py::str(k).cast<std::string>(), override_text(v));
    const RunConfig cfg = resolve_config(src);
    json out;
    {
        py::gil_scoped_release release;
        const LogFn log = verbose ? LogFn([](const std::string& s) { std::cerr << s << "\n"; }) : LogFn{};
        out = run_command(command, cfg, log);
    }
    return to_py(out);
}

py::dict generate(std::size_t n, std::uint64_t seed, const py::dict& spec_overrides) {
    json spec = to_json(DomainShiftSpec{});
    for (const auto& [k, v] : spec_overrides) {
        const std::string key = py::str(k);
        if (!spec.contains(key)) throw InputError("unknown shift key '" + key + "'");
        spec[key] = from_py(v);
    }
    const DomainShiftSpec s = shift_spec_from_json(spec);
    const Dataset d = generate_domain(s, n, seed);
    const auto side = static_cast<py::ssize_t>(s.image_size);
    py::array_t<double> images({static_cast<py::ssize_t>(n), py::ssize_t{3}, side, side});
    double* px = images.mutable_data();
    py::list boxes, labels;
    std::vector<double> severity;
    for (const Sample& sample : d.samples) {
        px = std::copy(sample.image.data.begin(), sample.image.data.end(), px);
        py::array_t<double> b({static_cast<py::ssize_t>(sample.gt.size()), py::ssize_t{4}});
        double* bp = b.mutable_data();
        for (const Box& box : sample.gt.boxes) {
            *bp++ = box.x1;
            *bp++ = box.y1;
            *bp++ = box.x2;
            *bp++ = box.y2;
        }
        boxes.append(b);
        labels.append(py::cast(sample.gt.labels));
        severity.push_back(sample.severity);
    }
    py::dict out;
    out["images"] = images;
    out["boxes"] = boxes;
    out["labels"] = labels;
    out["severity"] = severity;
    out["spec"] = to_py(spec);
    return out;
}

// boxes [M, N, 4] and scores [M, N, K] over M stochastic passes.
py::tuple variance(py::array_t<double, py::array::c_style | py::array::forcecast> boxes,
                   py::array_t<double, py::array::c_style | py::array::forcecast> scores) {
    if (boxes.ndim() != 3 || boxes.shape(2) != 4) throw std::invalid_argument("boxes must have shape [M, N, 4]");
    if (scores.ndim() != 3 || scores.shape(0) != boxes.shape(0) || scores.shape(1) != boxes.shape(1)) {
        throw std::invalid_argument("scores must have shape [M, N, K] matching boxes");
    }
    const auto b = boxes.unchecked<3>();
    const auto s = scores.unchecked<3>();
    std::vector<DetectionSet> passes(static_cast<std::size_t>(boxes.shape(0)));
    for (py::ssize_t m = 0; m < boxes.shape(0); ++m) {
        for (py::ssize_t j = 0; j < boxes.shape(1); ++j) {
            passes[m].boxes.push_back({b(m, j, 0), b(m, j, 1), b(m, j, 2), b(m, j, 3)});
            std::vector<double> row(static_cast<std::size_t>(scores.shape(2)));
            for (py::ssize_t k = 0; k < scores.shape(2); ++k) row[k] = s(m, j, k);
            passes[m].scores.push_back(std::move(row));
        }
    }
    const DetectionVariance v = detection_variance(passes);
    return py::make_tuple(v.box, v.score, v.value);
}

DiscriminatorSpec make_spec(std::vector<double> norms, std::vector<double> dists, double width, double data_norm,
                            std::optional<std::vector<double>> lipschitz) {
    DiscriminatorSpec s;
    s.lipschitz = lipschitz.value_or(std::vector<double>(norms.size(), 1.0));
    s.spectral_norms = std::move(norms);
    s.ref_distances = std::move(dists);
    s.max_width = width;
    s.data_norm = data_norm;
    return s;
}

}  // namespace

PYBIND11_MODULE(_titan, m) {
    m.doc() = "Source-free domain adaptive detection on synthetic data";
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

    m.def("config_keys", &config_keys, "Every recognised config key.");
    m.def("default_config", [] { return to_py(config_to_json(RunConfig{})); });
    m.def("commands", &command_names);
    m.def("run", &run, py::arg("command"), py::arg("overrides") = py::dict(), py::arg("config_file") = py::none(),
          py::arg("manifest") = py::none(), py::arg("verbose") = false,
          "Runs one subcommand and returns its summary. Precedence: defaults < config file or manifest < overrides.");
    m.def("generate", &generate, py::arg("n"), py::arg("seed"), py::arg("spec") = py::dict(),
          "Synthetic images [n, 3, H, W] with boxes, labels and per-image severity.");
    m.def("detection_variance", &variance, py::arg("boxes"), py::arg("scores"),
          "(box variance, score variance, product) over stochastic passes.");
    m.def(
        "partition",
        [](std::vector<double> v, double sigma) {
            const DomainPartition p = partition(v, sigma);
            py::dict out;
            out["ranks"] = p.ranks;
            out["levels"] = p.levels;
            out["source_similar"] = p.source_similar;
            out["source_dissimilar"] = p.source_dissimilar;
            return out;
        },
        py::arg("variances"), py::arg("sigma") = 0.5);
    m.def(
        "solve_assignment",
        [](const CostMatrix& c) {
            const Assignment a = solve_assignment(c);
            return py::make_tuple(a.pred_for_gt, a.total_cost);
        },
        py::arg("cost"), "Minimum-cost assignment of every row to a distinct column.");
    m.def(
        "covering_bound",
        [](std::vector<double> norms, std::vector<double> dists, double width, double data_norm, double eps,
           std::optional<std::vector<double>> lipschitz) {
            const bool with_rho = lipschitz.has_value();
            const DiscriminatorSpec s = make_spec(std::move(norms), std::move(dists), width, data_norm, std::move(lipschitz));
            return covering_bound(s, eps, with_rho ? BoundForm::LipschitzProduct : BoundForm::Product);
        },
        py::arg("spectral_norms"), py::arg("ref_distances"), py::arg("max_width"), py::arg("data_norm"),
        py::arg("epsilon"), py::arg("lipschitz") = py::none());
    m.def(
        "epsilon_allocation",
        [](std::vector<double> norms, double eps, std::optional<std::vector<double>> lipschitz) {
            std::vector<double> dists(norms.size(), 0.0);
            return epsilon_allocation(make_spec(std::move(norms), std::move(dists), 1.0, 1.0, std::move(lipschitz)), eps);
        },
        py::arg("spectral_norms"), py::arg("epsilon"), py::arg("lipschitz") = py::none());
    m.def(
        "epsilon_chain",
        [](std::vector<double> norms, double eps, std::optional<std::vector<double>> lipschitz) {
            std::vector<double> dists(norms.size(), 0.0);
            return epsilon_chain(make_spec(std::move(norms), std::move(dists), 1.0, 1.0, std::move(lipschitz)), eps);
        },
        py::arg("spectral_norms"), py::arg("epsilon"), py::arg("lipschitz") = py::none());
    m.def(
        "auc",
        [](std::vector<double> scores, std::vector<int> labels) { return classification_scores(scores, labels).auc; },
        py::arg("scores"), py::arg("labels"));
}
