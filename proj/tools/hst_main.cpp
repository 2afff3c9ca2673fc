#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hst/analysis.hpp"
#include "hst/config_io.hpp"
#include "hst/data.hpp"
#include "hst/error.hpp"
#include "hst/harness.hpp"
#include "hst/model.hpp"
#include "hst/topology.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Relative output paths land under $HST_OUTPUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("HST_OUTPUT_ROOT");
    if (!root || !*root || path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw hst::IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& out, const std::string& content) {
    if (out.empty()) {
        std::cout << content;
        if (!content.empty() && content.back() != '\n') std::cout << '\n';
        return;
    }
    const std::string path = resolve_out(out);
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw hst::IoError("cannot write " + path);
    f << content;
    std::cout << json{{"written", path}}.dump() << '\n';
}

json parse_config_file(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw hst::ParseError(path + ": " + e.what());
    }
    if (!j.is_object()) throw hst::SchemaError(path + ": config must be a JSON object");
    return j;
}

// A full experiment bundle: the same shape train() writes to config.json,
// so any run's config can be replayed directly.
struct Bundle {
    hst::HstModelConfig model;
    hst::TrainConfig train;
    hst::SarConfig sar;
    hst::SyntheticTaskSpec task;
};

Bundle load_bundle(const std::string& path) {
    const json j = parse_config_file(path);
    Bundle b;
    if (!j.contains("task")) throw hst::SchemaError(path + ": missing 'task' section");
    b.task = hst::task_spec_from_json(j.at("task"));
    if (!j.contains("model")) throw hst::SchemaError(path + ": missing 'model' section");
    b.model = hst::model_config_from_json(j.at("model"));
    if (j.contains("train")) b.train = hst::train_config_from_json(j.at("train"));
    if (j.contains("sar")) b.sar = hst::sar_config_from_json(j.at("sar"));
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "task" && key != "model" && key != "train" && key != "sar")
            throw hst::SchemaError(path + ": unknown section '" + key + "'");
    }
    return b;
}

struct BundleOverrides {
    std::optional<uint64_t> seed;
    std::optional<int64_t> steps;
    std::optional<int64_t> g;
    std::optional<double> alpha;
    bool no_sar = false;

    void apply(Bundle& b) const {
        if (seed) b.train.seed = *seed;
        if (steps) b.train.steps = *steps;
        if (g) {
            b.model.g = *g;
            b.model.n_base = 0;  // re-derive the padded length for the new g
        }
        if (alpha) b.sar.alpha = *alpha;
        if (no_sar) b.sar.enabled = false;
    }
};

void add_override_flags(CLI::App* cmd, BundleOverrides& ov) {
    cmd->add_option("--seed", ov.seed, "Override train.seed");
    cmd->add_option("--steps", ov.steps, "Override train.steps");
    cmd->add_option("--g", ov.g, "Override model.g (re-derives the padded length)");
    cmd->add_option("--alpha", ov.alpha, "Override sar.alpha");
    cmd->add_flag("--no-sar", ov.no_sar, "Disable the consistency objective");
}

json train_result_json(const hst::TrainResult& r, const std::string& out_dir) {
    return json{{"steps_run", r.steps_run},
                {"final_loss", r.final_loss},
                {"dev_accuracy", r.dev_accuracy},
                {"dev_divergence", r.dev_divergence},
                {"test_accuracy", r.test_accuracy},
                {"test_divergence", r.test_divergence},
                {"out_dir", out_dir}};
}

}  // namespace

int main(int argc, char** argv) {
    hst::tune_allocator();
    CLI::App app{"Hierarchical sparse transformer experiments"};
    app.require_subcommand(1);

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "Train a model on a synthetic task");
    std::string train_config, train_out = "run", train_data;
    BundleOverrides train_ov;
    train_cmd->add_option("--config", train_config, "Experiment bundle (model/train/sar/task)")
        ->required();
    train_cmd->add_option("--out", train_out, "Artifact directory (under $HST_OUTPUT_ROOT)");
    train_cmd->add_option("--data", train_data,
                          "Stored dataset prefix (expects <prefix>_train/_dev/_test)");
    add_override_flags(train_cmd, train_ov);

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a stored dataset");
    std::string eval_ckpt, eval_data;
    int64_t eval_roll = 0, eval_roll_layer = 0, eval_batch = 64;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset prefix (<prefix>.bin/.json)")->required();
    eval_cmd->add_option("--roll", eval_roll, "Divergence probe roll amount (0 = off)");
    eval_cmd->add_option("--roll-layer", eval_roll_layer, "Layer the probe rolls at");
    eval_cmd->add_option("--batch", eval_batch, "Evaluation batch size");

    // ---- sweep ----
    auto* sweep_cmd = app.add_subcommand("sweep", "Global-width bottleneck sweep");
    std::string sweep_config, sweep_out = "sweep";
    std::vector<int64_t> sweep_gs;
    int64_t sweep_repeats = 2;
    BundleOverrides sweep_ov;
    sweep_cmd->add_option("--config", sweep_config, "Experiment bundle (model/train/sar/task)")
        ->required();
    sweep_cmd->add_option("--gs", sweep_gs, "Global token counts to sweep")
        ->required()
        ->delimiter(',');
    sweep_cmd->add_option("--repeats", sweep_repeats, "Seeds per cell");
    sweep_cmd->add_option("--out", sweep_out, "Artifact directory (under $HST_OUTPUT_ROOT)");
    add_override_flags(sweep_cmd, sweep_ov);

    // ---- gen-data ----
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate and store a synthetic dataset");
    std::string gen_config, gen_task = "CROSS_BLOCK_PARITY", gen_out = "data";
    std::optional<int64_t> gen_length, gen_block, gen_depth, gen_train, gen_dev, gen_test;
    std::optional<uint64_t> gen_seed;
    gen_cmd->add_option("--config", gen_config, "Bundle or {\"task\": ...} file to start from");
    gen_cmd->add_option("--task", gen_task, "CROSS_BLOCK_PARITY or LISTOPS_MINI");
    gen_cmd->add_option("--length", gen_length, "Tokens per row");
    gen_cmd->add_option("--block-width", gen_block, "Parity mark-block width");
    gen_cmd->add_option("--max-depth", gen_depth, "ListOps nesting budget");
    gen_cmd->add_option("--seed", gen_seed, "Generation seed");
    gen_cmd->add_option("--train-size", gen_train, "Training rows");
    gen_cmd->add_option("--dev-size", gen_dev, "Dev rows");
    gen_cmd->add_option("--test-size", gen_test, "Test rows");
    gen_cmd->add_option("--out", gen_out, "Output prefix (under $HST_OUTPUT_ROOT)");

    // ---- inspect-topology ----
    auto* topo_cmd = app.add_subcommand("inspect-topology", "Emit a topology as JSON");
    int64_t topo_n = 0, topo_g = 0, topo_w = 1, topo_r = 0;
    bool topo_reps = false;
    std::optional<uint64_t> topo_seed;
    std::string topo_out;
    topo_cmd->add_option("--n-base", topo_n, "Sequence length before insertion")->required();
    topo_cmd->add_option("--g", topo_g, "Global tokens");
    topo_cmd->add_option("--w", topo_w, "Block width");
    topo_cmd->add_flag("--reps", topo_reps, "Insert representative slots");
    topo_cmd->add_option("--random-edges", topo_r, "Extra random columns per row");
    topo_cmd->add_option("--topo-seed", topo_seed, "Seed for the random columns");
    topo_cmd->add_option("--out", topo_out, "Write to file instead of stdout");

    // ---- flow ----
    auto* flow_cmd = app.add_subcommand("flow", "Information-flow report for a topology");
    std::string flow_topo_file, flow_out;
    int64_t flow_n = 0, flow_g = 0, flow_w = 1, flow_layers = 2;
    bool flow_reps = false, flow_hier = false;
    flow_cmd->add_option("--topology", flow_topo_file, "Topology JSON from inspect-topology");
    flow_cmd->add_option("--n-base", flow_n, "Build: sequence length before insertion");
    flow_cmd->add_option("--g", flow_g, "Build: global tokens");
    flow_cmd->add_option("--w", flow_w, "Build: block width");
    flow_cmd->add_flag("--reps", flow_reps, "Build: insert representative slots");
    flow_cmd->add_option("--layers", flow_layers, "Layer budget for the reach analysis");
    flow_cmd->add_flag("--hierarchical", flow_hier, "Mix representatives each layer");
    flow_cmd->add_option("--out", flow_out, "Write to file instead of stdout");

    // ---- flops ----
    auto* flops_cmd = app.add_subcommand("flops", "Attention cost table (CSV)");
    std::vector<int64_t> flops_n;
    int64_t flops_g = 0, flops_w = 1, flops_d = 64;
    std::string flops_out;
    flops_cmd->add_option("--n-base", flops_n, "Sequence lengths")->required()->delimiter(',');
    flops_cmd->add_option("--g", flops_g, "Global tokens");
    flops_cmd->add_option("--w", flops_w, "Block width");
    flops_cmd->add_option("--d", flops_d, "Model width");
    flops_cmd->add_option("--out", flops_out, "Write to file instead of stdout");

    // ---- plotdata ----
    auto* plot_cmd = app.add_subcommand("plotdata", "Merge sweep runs.csv files");
    std::vector<std::string> plot_files;
    std::string plot_out;
    plot_cmd->add_option("files", plot_files, "runs.csv inputs")->required();
    plot_cmd->add_option("--out", plot_out, "Write to file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
        return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
    }

    try {
        if (*train_cmd) {
            Bundle b = load_bundle(train_config);
            train_ov.apply(b);
            const std::string out = resolve_out(train_out);
            hst::TrainResult r;
            if (train_data.empty()) {
                r = hst::train(b.model, b.train, b.sar, b.task, out);
            } else {
                const hst::LoadedDataset tr = hst::load_dataset(train_data + "_train");
                const hst::LoadedDataset dv = hst::load_dataset(train_data + "_dev");
                const hst::LoadedDataset te = hst::load_dataset(train_data + "_test");
                r = hst::train_on(b.model, b.train, b.sar, tr.spec, tr.data, dv.data, te.data,
                                  out);
            }
            std::cout << train_result_json(r, out).dump(2) << '\n';
        } else if (*eval_cmd) {
            const hst::HstModel model = hst::load_checkpoint(eval_ckpt);
            const hst::LoadedDataset ds = hst::load_dataset(eval_data);
            const hst::EvalResult r =
                hst::evaluate(model, ds.data, eval_roll, eval_roll_layer, eval_batch);
            std::cout << json{{"accuracy", r.accuracy},
                              {"divergence", r.divergence},
                              {"count", r.count},
                              {"split", hst::to_string(ds.split)}}
                             .dump(2)
                      << '\n';
        } else if (*sweep_cmd) {
            Bundle b = load_bundle(sweep_config);
            sweep_ov.apply(b);
            const std::string out = resolve_out(sweep_out);
            const hst::SweepResult r =
                hst::bottleneck_sweep(b.model, b.train, b.sar, b.task, sweep_gs, sweep_repeats, out);
            std::cout << json{{"runs_csv", r.runs_csv}, {"summary_csv", r.summary_csv}}.dump(2)
                      << '\n';
        } else if (*gen_cmd) {
            hst::SyntheticTaskSpec spec;
            if (!gen_config.empty()) {
                const json j = parse_config_file(gen_config);
                spec = hst::task_spec_from_json(j.contains("task") ? j.at("task") : j);
            }
            if (gen_cmd->count("--task")) spec.task = hst::task_kind_from_string(gen_task);
            if (gen_length) spec.length = *gen_length;
            if (gen_block) spec.block_width = *gen_block;
            if (gen_depth) spec.max_depth = *gen_depth;
            if (gen_seed) spec.seed = *gen_seed;
            if (gen_train) spec.train_size = *gen_train;
            if (gen_dev) spec.dev_size = *gen_dev;
            if (gen_test) spec.test_size = *gen_test;
            spec.validate();
            const std::string prefix = resolve_out(gen_out);
            if (fs::path(prefix).has_parent_path())
                fs::create_directories(fs::path(prefix).parent_path());
            json written = json::array();
            for (const hst::Split split :
                 {hst::Split::kTrain, hst::Split::kDev, hst::Split::kTest}) {
                const hst::Dataset ds = hst::generate_dataset(spec, split);
                if (ds.size() == 0) continue;
                const std::string p = prefix + "_" + hst::to_string(split);
                hst::save_dataset(ds, spec, split, p);
                written.push_back({{"prefix", p}, {"rows", ds.size()}});
            }
            std::cout << json{{"written", written}}.dump(2) << '\n';
        } else if (*topo_cmd) {
            const hst::SparseTopology t =
                hst::build_topology(topo_n, topo_g, topo_w, topo_reps, topo_r, topo_seed);
            write_output(topo_out, hst::topology_json(t));
        } else if (*flow_cmd) {
            hst::SparseTopology t;
            if (!flow_topo_file.empty()) {
                t = hst::topology_from_json(read_file(flow_topo_file));
            } else if (flow_n > 0) {
                t = hst::build_topology(flow_n, flow_g, flow_w, flow_reps);
            } else {
                throw hst::ConfigError("flow needs --topology FILE or --n-base/--g/--w");
            }
            const hst::FlowReport r = hst::flow_report(t, flow_layers, flow_hier);
            write_output(flow_out, hst::flow_report_json(r));
        } else if (*flops_cmd) {
            std::vector<hst::FlopRow> rows;
            rows.reserve(flops_n.size());
            for (int64_t n : flops_n) rows.push_back(hst::flop_row(n, flops_g, flops_w, flops_d));
            write_output(flops_out, hst::flop_table_csv(rows));
        } else if (*plot_cmd) {
            const hst::PlotdataResult r = hst::sweep_plotdata(plot_files);
            for (const std::string& w : r.warnings)
                std::cerr << json{{"warning", w}}.dump() << '\n';
            write_output(plot_out, r.csv);
        }
    } catch (const hst::Error& e) {
        std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 2;
    }
    return 0;
}
