#include <string>
#include <vector>

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fooloc/attack.hpp"
#include "fooloc/error.hpp"
#include "fooloc/harness.hpp"
#include "fooloc/metrics.hpp"
#include "fooloc/models.hpp"
#include "fooloc/pipeline.hpp"

namespace py = pybind11;
using namespace fooloc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

AmplitudeSample sample_from(const Array& a)
{
    require(a.ndim() == 2, "expected an N x K array");
    AmplitudeSample s;
    s.amps = Tensor(Shape{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                    std::vector<double>(a.data(), a.data() + a.size()));
    return s;
}

Array to_array(const Tensor& t)
{
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Bindings for the fooloc simulator core";

    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<StructuralError>(m, "StructuralError", PyExc_RuntimeError);
    py::register_exception<StageDependencyError>(m, "StageDependencyError", PyExc_RuntimeError);

    m.def(
        "parse_config",
        [](const std::string& text, const std::vector<std::string>& overrides) {
            return canonical_json(parse_config(text, overrides));
        },
        py::arg("text") = "{}", py::arg("overrides") = std::vector<std::string>{},
        "Validate a JSON config and return its canonical form with defaults filled in.");
    m.def(
        "config_hash",
        [](const std::string& text, const std::vector<std::string>& overrides) {
            return config_hash(parse_config(text, overrides));
        },
        py::arg("text") = "{}", py::arg("overrides") = std::vector<std::string>{});
    m.def(
        "run_pipeline",
        [](const std::string& text, const std::string& stage, const std::vector<std::string>& overrides,
           std::size_t jobs, const std::function<void(const std::string&)>& log) {
            const RunConfig cfg = parse_config(text, overrides);
            PipelineOptions opts;
            opts.jobs = jobs;
            if (log) {
                opts.log = [log](const std::string& line) {
                    py::gil_scoped_acquire gil;
                    log(line);
                };
            }
            py::gil_scoped_release release;
            run_pipeline(cfg, stage_from_string(stage), opts);
        },
        py::arg("config") = "{}", py::arg("stage") = "all", py::arg("overrides") = std::vector<std::string>{},
        py::arg("jobs") = 1, py::arg("log") = nullptr);
    m.def(
        "report_jsonl",
        [](const std::filesystem::path& dir) {
            std::vector<std::string> out;
            for (const ExperimentReport& r : load_reports(dir)) {
                out.push_back(report_to_jsonl(r));
            }
            return out;
        },
        py::arg("output_dir"), "Row and summary records of every stored experiment report.");

    m.def(
        "percentile", [](std::vector<double> v, double q) { return percentile(std::move(v), q); }, py::arg("values"),
        py::arg("q"));
    m.def(
        "psr_db",
        [](const Array& perturbed, const Array& original) {
            return perturbation_to_signal_ratio(sample_from(perturbed), sample_from(original));
        },
        py::arg("perturbed"), py::arg("original"));
    m.def(
        "weights_from_xi",
        [](const std::vector<double>& xi, double delta_max) {
            return make_perturbation(xi, delta_max, {}, std::nullopt, 1).gamma;
        },
        py::arg("xi"), py::arg("delta_max") = 0.15, "gamma = tanh(xi) * delta_max + 1");
    m.def(
        "apply_perturbation",
        [](const std::vector<double>& gamma, const Array& amps) {
            return to_array(apply_perturbation(gamma, sample_from(amps)).amps);
        },
        py::arg("gamma"), py::arg("amps"));
    m.def(
        "predict",
        [](const std::filesystem::path& model_path, const Array& batch) {
            require(batch.ndim() == 3, "expected a B x N x K array");
            const LocalizationModel model = load_model(model_path);
            const std::size_t b = batch.shape(0), n = batch.shape(1), k = batch.shape(2);
            std::vector<AmplitudeSample> xs(b);
            for (std::size_t i = 0; i < b; ++i) {
                xs[i].amps = Tensor(Shape{n, k}, std::vector<double>(batch.data() + i * n * k,
                                                                      batch.data() + (i + 1) * n * k));
            }
            const std::vector<Point2> preds = predict_batch(model, xs);
            Array out({static_cast<py::ssize_t>(b), py::ssize_t{2}});
            for (std::size_t i = 0; i < b; ++i) {
                out.mutable_at(i, 0) = preds[i].x;
                out.mutable_at(i, 1) = preds[i].y;
            }
            return out;
        },
        py::arg("model_path"), py::arg("amps"), "Predicted (x, y) per sample from a saved model.");
    m.def(
        "grid",
        [](std::size_t nx, std::size_t ny, double spacing, double offset_fraction) {
            GridConfig cfg;
            cfg.nx = nx;
            cfg.ny = ny;
            cfg.spacing = spacing;
            cfg.offset_fraction = offset_fraction;
            cfg.area = {0.0, cfg.origin.x + spacing * (nx - 1) + cfg.origin.x, 0.0,
                        cfg.origin.y + spacing * (ny - 1) + cfg.origin.y};
            const SpotGrid g = build_grid(cfg);
            py::list a, b;
            for (std::size_t i = 0; i < g.a_spots.size(); ++i) {
                a.append(py::make_tuple(g.a_spots[i].x, g.a_spots[i].y));
                b.append(py::make_tuple(g.b_spots[i].x, g.b_spots[i].y));
            }
            return py::make_tuple(a, b);
        },
        py::arg("nx") = 6, py::arg("ny") = 6, py::arg("spacing") = 1.5, py::arg("offset_fraction") = 0.5,
        "A- and B-spot coordinates of a lattice whose area is padded by the origin offset.");
}
