#include "nws/analysis.hpp"
#include "nws/arch.hpp"
#include "nws/error.hpp"
#include "nws/features.hpp"
#include "nws/pipeline.hpp"
#include "nws/store.hpp"
#include "nws/svm.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace nws;

namespace {

py::dict counts_dict(const WeightCounts& c) {
    py::dict d;
    d["total"] = c.total;
    d["conv"] = c.conv_total;
    d["fc"] = c.fc_total;
    return d;
}

py::list groups_list(const GroupIndex& gi) {
    py::list out;
    for (const auto& g : gi.groups) {
        py::dict d;
        d["layer"] = g.layer;
        d["kind"] = std::string(to_string(g.kind));
        d["offset"] = g.offset;
        d["length"] = g.length;
        out.append(d);
    }
    return out;
}

py::array_t<float> to_array(const std::vector<float>& v) {
    py::array_t<float> a(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

StageSummary run_stage(const std::string& name, const PipelineConfig& cfg) {
    if (name == "sample-train") return stage_sample_train(cfg);
    if (name == "featurize") return stage_featurize(cfg);
    if (name == "meta-train") return stage_meta_train(cfg);
    if (name == "meta-eval") return stage_meta_eval(cfg);
    if (name == "map") return stage_map(cfg);
    if (name == "regress") return stage_regress(cfg);
    if (name == "report") return stage_report(cfg);
    throw ConfigError("unknown stage '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    // translators run newest first, so the base class goes first
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

    m.def(
        "cnn_counts",
        [](int filter_size, int conv_depth, int fc_depth, int conv_width, int fc_width, int classes) {
            return counts_dict(count_weights(build_cnn({filter_size, conv_depth, fc_depth, conv_width, fc_width}, classes)));
        },
        py::arg("filter_size") = 5, py::arg("conv_depth") = 3, py::arg("fc_depth") = 3, py::arg("conv_width") = 32,
        py::arg("fc_width") = 128, py::arg("classes") = 10);
    m.def(
        "dmc_counts",
        [](const std::string& scope, std::size_t input_len, std::size_t classes) {
            const auto kind = scope == "global" ? DmcKind::global : scope == "local" ? DmcKind::local : throw ConfigError("scope must be global or local");
            return counts_dict(count_weights(build_dmc(kind, input_len, classes)));
        },
        py::arg("scope"), py::arg("input_len"), py::arg("classes"));

    m.def(
        "stats16", [](const std::vector<double>& v) { return stats16(v); }, py::arg("values"));
    m.def("stat_names", [] { return subset_schema(); });

    m.def(
        "read_snapshot",
        [](const std::filesystem::path& path) {
            const auto s = read_snapshot(path);
            py::dict d;
            d["theta"] = to_array(s.weights.theta);
            d["groups"] = groups_list(s.weights.index);
            d["conv_end"] = s.weights.index.conv_end;
            d["arch_hash"] = s.arch_hash;
            d["meta"] = s.meta.dump();
            return d;
        },
        py::arg("path"));
    m.def(
        "read_manifest",
        [](const std::filesystem::path& path) {
            std::vector<std::string> out;
            for (const auto& r : read_manifest(path)) out.push_back(to_json(r).dump());
            return out;
        },
        py::arg("path"));

    py::class_<SvmModel>(m, "SvmModel")
        .def_property_readonly("classes", [](const SvmModel& s) { return s.classes; })
        .def_property_readonly("kind", [](const SvmModel& s) { return std::string(to_string(s.kind)); })
        .def("decision_values", [](const SvmModel& s, const Matrix& X) { return decision_values(s, X); })
        .def("predict", [](const SvmModel& s, const Matrix& X) { return predict(s, X); })
        .def("save", [](const SvmModel& s, const std::filesystem::path& p) { save_svm(p, s); });
    m.def(
        "fit_svm",
        [](const Matrix& X, const std::vector<int>& y, const std::vector<std::string>& classes, const std::string& kind, double lam,
           double C) {
            SvmConfig cfg;
            cfg.kind = parse_svm_kind(kind);
            cfg.lambda = lam;
            cfg.C = C;
            return fit_svm(X, y, classes, cfg);
        },
        py::arg("X"), py::arg("y"), py::arg("classes"), py::arg("kind") = "linear", py::arg("lam") = 1e-2, py::arg("C") = 1.0);
    m.def("load_svm", [](const std::filesystem::path& p) { return load_svm(p); }, py::arg("path"));

    m.def(
        "fit_ols",
        [](const Matrix& X, const std::vector<double>& y) {
            const auto f = fit_ols(X, y);
            py::dict d;
            d["coef"] = f.coef;
            d["std_errors"] = f.std_errors;
            d["p_values"] = f.p_values;
            d["rank"] = f.rank;
            d["residual_error"] = f.residual_error;
            d["baseline_error"] = f.baseline_error;
            return d;
        },
        py::arg("X"), py::arg("y"));
    m.def(
        "pca",
        [](const Matrix& X, std::size_t k, std::uint64_t seed) {
            PcaConfig cfg;
            cfg.seed = seed;
            const auto p = pca(X, k, cfg);
            py::dict d;
            d["mean"] = p.mean;
            d["components"] = p.components;
            d["variances"] = p.variances;
            d["total_variance"] = p.total_variance;
            return d;
        },
        py::arg("X"), py::arg("k"), py::arg("seed") = 0);

    m.def(
        "run_stages",
        [](const std::vector<std::string>& stages, const std::filesystem::path& config, const std::map<std::string, std::string>& overrides) {
            auto rc = config.empty() ? RunConfig() : RunConfig::load(config);
            for (const auto& [k, v] : overrides) rc.set(k, v);
            const auto cfg = pipeline_config(rc);
            StageSummary out;
            py::gil_scoped_release release;
            for (const auto& s : stages) {
                auto lines = run_stage(s, cfg);
                out.insert(out.end(), lines.begin(), lines.end());
            }
            return out;
        },
        py::arg("stages"), py::arg("config") = std::filesystem::path(), py::arg("overrides") = std::map<std::string, std::string>{});
}
