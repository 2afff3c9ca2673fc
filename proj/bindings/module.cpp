#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "json.hpp"

#include "hst/analysis.hpp"
#include "hst/config_io.hpp"
#include "hst/data.hpp"
#include "hst/error.hpp"
#include "hst/harness.hpp"
#include "hst/model.hpp"
#include "hst/topology.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

// The python side passes configs as JSON text; dicts are serialized in
// hstlab/__init__.py so only strings cross the boundary.
json parse(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw hst::ParseError(std::string(what) + ": " + e.what());
    }
}

struct Bundle {
    hst::HstModelConfig model;
    hst::TrainConfig train;
    hst::SarConfig sar;
    hst::SyntheticTaskSpec task;
};

Bundle parse_bundle(const std::string& text) {
    const json j = parse(text, "config bundle");
    if (!j.is_object()) throw hst::SchemaError("config bundle must be a JSON object");
    Bundle b;
    if (!j.contains("task")) throw hst::SchemaError("config bundle: missing 'task' section");
    b.task = hst::task_spec_from_json(j.at("task"));
    if (!j.contains("model")) throw hst::SchemaError("config bundle: missing 'model' section");
    b.model = hst::model_config_from_json(j.at("model"));
    if (j.contains("train")) b.train = hst::train_config_from_json(j.at("train"));
    if (j.contains("sar")) b.sar = hst::sar_config_from_json(j.at("sar"));
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "task" && key != "model" && key != "train" && key != "sar")
            throw hst::SchemaError("config bundle: unknown section '" + key + "'");
    }
    return b;
}

hst::Split split_from_string(const std::string& split) {
    if (split == "train") return hst::Split::kTrain;
    if (split == "dev") return hst::Split::kDev;
    if (split == "test") return hst::Split::kTest;
    throw hst::ConfigError("split must be train, dev, or test, got '" + split + "'");
}

std::string train_result_json(const hst::TrainResult& r) {
    return json{{"steps_run", r.steps_run},
                {"final_loss", r.final_loss},
                {"dev_accuracy", r.dev_accuracy},
                {"dev_divergence", r.dev_divergence},
                {"test_accuracy", r.test_accuracy},
                {"test_divergence", r.test_divergence}}
        .dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    hst::tune_allocator();
    m.doc() = "Hierarchical sparse transformer core operations";

    // hst::Error -> hstlab.HstError, message prefixed "<kind>: " so callers
    // can dispatch on the kind without one exception class per kind. This
    // translator registers after py::exception's default one and therefore
    // runs first, replacing the plain-what() message.
    static py::handle exc = py::exception<hst::Error>(m, "HstError").release();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const hst::Error& e) {
            py::set_error(exc, (std::string(e.kind()) + ": " + e.what()).c_str());
        }
    });

    m.def(
        "topology_json",
        [](int64_t n_base, int64_t g, int64_t w, bool insert_reps, int64_t r,
           std::optional<uint64_t> seed) {
            return hst::topology_json(hst::build_topology(n_base, g, w, insert_reps, r, seed));
        },
        py::arg("n_base"), py::arg("g"), py::arg("w"), py::arg("insert_reps") = false,
        py::arg("r") = 0, py::arg("seed") = std::nullopt,
        "Build a global+block topology and serialize it");

    m.def(
        "flow_report_json",
        [](const std::string& topology, int64_t layers, bool hierarchical) {
            return hst::flow_report_json(
                hst::flow_report(hst::topology_from_json(topology), layers, hierarchical));
        },
        py::arg("topology"), py::arg("layers"), py::arg("hierarchical") = false,
        "Reach/bottleneck analysis of a serialized topology");

    m.def(
        "path_counts",
        [](const std::string& topology, int64_t layers, int64_t src, bool hierarchical) {
            return hst::path_counts_from(hst::topology_from_json(topology), layers, src,
                                         hierarchical);
        },
        py::arg("topology"), py::arg("layers"), py::arg("src"), py::arg("hierarchical") = false,
        "Saturating per-destination path counts from one source token");

    m.def(
        "flop_table_csv",
        [](const std::vector<int64_t>& n_base, int64_t g, int64_t w, int64_t d) {
            std::vector<hst::FlopRow> rows;
            rows.reserve(n_base.size());
            for (int64_t n : n_base) rows.push_back(hst::flop_row(n, g, w, d));
            return hst::flop_table_csv(rows);
        },
        py::arg("n_base"), py::arg("g"), py::arg("w"), py::arg("d") = 64,
        "Attention cost table for a list of sequence lengths");

    m.def(
        "generate_dataset",
        [](const std::string& task, const std::string& split) {
            const json j = parse(task, "task spec");
            const hst::SyntheticTaskSpec spec = hst::task_spec_from_json(j);
            const hst::Dataset ds = hst::generate_dataset(spec, split_from_string(split));
            return py::make_tuple(ds.rows, ds.labels);
        },
        py::arg("task"), py::arg("split"),
        "Deterministic (rows, labels) for a task spec and split");

    m.def(
        "save_dataset",
        [](const std::string& task, const std::string& split, const std::string& prefix) {
            const json j = parse(task, "task spec");
            const hst::SyntheticTaskSpec spec = hst::task_spec_from_json(j);
            const hst::Split s = split_from_string(split);
            const hst::Dataset ds = hst::generate_dataset(spec, s);
            hst::save_dataset(ds, spec, s, prefix);
            return ds.size();
        },
        py::arg("task"), py::arg("split"), py::arg("prefix"),
        "Generate one split and store it as <prefix>.bin/.json; returns rows written");

    m.def(
        "train",
        [](const std::string& config, const std::string& out_dir) {
            const Bundle b = parse_bundle(config);
            return train_result_json(hst::train(b.model, b.train, b.sar, b.task, out_dir));
        },
        py::arg("config"), py::arg("out_dir"),
        "Train on the bundled task; writes artifacts under out_dir");

    m.def(
        "evaluate_checkpoint",
        [](const std::string& checkpoint, const std::string& data, int64_t roll,
           int64_t roll_layer, int64_t batch) {
            const hst::HstModel model = hst::load_checkpoint(checkpoint);
            const hst::LoadedDataset ds = hst::load_dataset(data);
            const hst::EvalResult r = hst::evaluate(model, ds.data, roll, roll_layer, batch);
            return json{{"accuracy", r.accuracy},
                        {"divergence", r.divergence},
                        {"count", r.count},
                        {"split", hst::to_string(ds.split)}}
                .dump();
        },
        py::arg("checkpoint"), py::arg("data"), py::arg("roll") = 0, py::arg("roll_layer") = 0,
        py::arg("batch") = 64, "Accuracy + divergence probe of a stored checkpoint");

    m.def(
        "bottleneck_sweep",
        [](const std::string& config, const std::vector<int64_t>& gs, int64_t repeats,
           const std::string& out_dir) {
            const Bundle b = parse_bundle(config);
            const hst::SweepResult r =
                hst::bottleneck_sweep(b.model, b.train, b.sar, b.task, gs, repeats, out_dir);
            return json{{"runs_csv", r.runs_csv}, {"summary_csv", r.summary_csv}}.dump();
        },
        py::arg("config"), py::arg("gs"), py::arg("repeats"), py::arg("out_dir"),
        "Global-width sweep over {HST, ST}; writes runs.csv and summary.csv");

    m.def(
        "sweep_plotdata",
        [](const std::vector<std::string>& files) {
            const hst::PlotdataResult r = hst::sweep_plotdata(files);
            return py::make_tuple(r.csv, r.warnings);
        },
        py::arg("files"), "Merge sweep runs.csv files into (summary_csv, warnings)");
}
