#include "hst/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "hst/error.hpp"

using nlohmann::json;

namespace hst {

namespace {

// One layered step of the information-flow model: j receives from i iff j
// attends i; then, when hierarchical, the representatives pool together.
std::vector<uint8_t> flow_step(const SparseTopology& topo, const std::vector<uint8_t>& have,
                               bool hierarchical) {
    const int64_t n = topo.n;
    std::vector<uint8_t> next(n, 0);
    for (int64_t j = 0; j < n; ++j) {
        const uint8_t* row = topo.mask.data() + j * n;
        for (int64_t i = 0; i < n; ++i) {
            if (row[i] && have[i]) {
                next[j] = 1;
                break;
            }
        }
    }
    if (hierarchical && topo.has_reps()) {
        bool any = false;
        for (int64_t p : topo.rep_positions) any |= next[p] != 0;
        if (any)
            for (int64_t p : topo.rep_positions) next[p] = 1;
    }
    return next;
}

}  // namespace

FlowReport flow_report(const SparseTopology& topo, int64_t layers, bool hierarchical) {
    if (layers < 1) throw ConfigError("flow report needs at least one layer");
    if (hierarchical && !topo.has_reps())
        throw ConfigError("hierarchical flow requires a topology with representatives");
    const int64_t n = topo.n;

    FlowReport r;
    r.n = n;
    r.g = topo.g;
    r.w = topo.w;
    r.m = topo.m;
    r.layers = layers;
    r.hierarchical = hierarchical;

    std::vector<uint8_t> is_rep(n, 0);
    for (int64_t p : topo.rep_positions) is_rep[p] = 1;
    // Original tokens: the actual sequence content (not global, not a rep).
    std::vector<int64_t> originals;
    for (int64_t i = topo.g; i < n; ++i)
        if (!is_rep[i]) originals.push_back(i);

    // Minimum-depth matrix: track the first layer each position is reached.
    r.depth.assign(n * n, -1);
    for (int64_t src = 0; src < n; ++src) {
        int64_t* drow = r.depth.data() + src * n;
        drow[src] = 0;
        std::vector<uint8_t> have(n, 0);
        have[src] = 1;
        for (int64_t l = 1; l <= layers; ++l) {
            have = flow_step(topo, have, hierarchical);
            for (int64_t j = 0; j < n; ++j)
                if (have[j] && drow[j] < 0) drow[j] = l;
        }
    }

    // Exact-depth path counts over cross-block original pairs.
    for (int64_t src : originals) {
        const std::vector<uint64_t> counts = path_counts_from(topo, layers, src, hierarchical);
        const int64_t bs = topo.block_of(src);
        for (int64_t dst : originals) {
            if (topo.block_of(dst) == bs) continue;
            ++r.cross_pairs;
            ++r.path_histogram[counts[dst]];
            if (r.depth[src * n + dst] < 0) ++r.unreachable_cross_pairs;
        }
    }

    // Depth-2 relays: F1(src) = one layered step from src (the mix included,
    // so a hierarchical F1 holds every representative); an original dst then
    // pulls from y in one step iff dst attends y. The relay set of a pair is
    // the intersection, and the bottleneck is the union over all pairs.
    std::vector<std::vector<uint8_t>> f1(originals.size());
    for (size_t a = 0; a < originals.size(); ++a) {
        std::vector<uint8_t> have(n, 0);
        have[originals[a]] = 1;
        f1[a] = flow_step(topo, have, hierarchical);
    }
    std::set<int64_t> relays;
    for (size_t a = 0; a < originals.size(); ++a) {
        const int64_t bs = topo.block_of(originals[a]);
        for (int64_t dst : originals) {
            if (topo.block_of(dst) == bs) continue;
            const uint8_t* back = topo.mask.data() + dst * n;
            for (int64_t y = 0; y < n; ++y)
                if (f1[a][y] && back[y]) relays.insert(y);
        }
    }
    r.bottleneck_relays.assign(relays.begin(), relays.end());
    r.bottleneck_width = static_cast<int64_t>(r.bottleneck_relays.size());
    return r;
}

std::string flow_report_json(const FlowReport& r) {
    json j;
    j["n"] = r.n;
    j["g"] = r.g;
    j["w"] = r.w;
    j["m"] = r.m;
    j["layers"] = r.layers;
    j["hierarchical"] = r.hierarchical;
    json depth = json::array();
    for (int64_t src = 0; src < r.n; ++src)
        depth.push_back(std::vector<int64_t>(r.depth.begin() + src * r.n,
                                             r.depth.begin() + (src + 1) * r.n));
    j["depth"] = std::move(depth);
    json hist = json::object();
    for (const auto& [count, pairs] : r.path_histogram) hist[std::to_string(count)] = pairs;
    j["path_histogram"] = std::move(hist);
    j["cross_pairs"] = r.cross_pairs;
    j["unreachable_cross_pairs"] = r.unreachable_cross_pairs;
    j["bottleneck_relays"] = r.bottleneck_relays;
    j["bottleneck_width"] = r.bottleneck_width;
    return j.dump(2);
}

FlopRow flop_row(int64_t n_base, int64_t g, int64_t w, int64_t d) {
    if (d < 1) throw ConfigError("model width must be positive");
    const SparseTopology topo = build_topology(n_base, g, w, /*insert_reps=*/true);
    FlopRow row;
    row.n_base = n_base;
    row.g = g;
    row.w = w;
    row.m = topo.m;
    row.d = d;
    row.n_hst = topo.n;
    row.sparse_macs = flop_estimate(topo, d, false);
    row.hst_macs = flop_estimate(topo, d, true);
    row.hier_delta = row.hst_macs - row.sparse_macs;
    row.dense_macs = static_cast<uint64_t>(n_base) * static_cast<uint64_t>(n_base) *
                     static_cast<uint64_t>(d);
    row.sparse_over_dense = static_cast<double>(row.sparse_macs) / static_cast<double>(row.dense_macs);
    row.hst_over_dense = static_cast<double>(row.hst_macs) / static_cast<double>(row.dense_macs);
    return row;
}

std::string flop_table_csv(const std::vector<FlopRow>& rows) {
    std::ostringstream out;
    out << "n_base,g,w,m,d,n_hst,sparse_macs,hst_macs,hier_delta,dense_macs,"
           "sparse_over_dense,hst_over_dense\n";
    for (const FlopRow& r : rows)
        out << r.n_base << ',' << r.g << ',' << r.w << ',' << r.m << ',' << r.d << ',' << r.n_hst
            << ',' << r.sparse_macs << ',' << r.hst_macs << ',' << r.hier_delta << ','
            << r.dense_macs << ',' << json(r.sparse_over_dense).dump() << ','
            << json(r.hst_over_dense).dump() << '\n';
    return out.str();
}

namespace {

struct RunRow {
    std::string model;
    int64_t g = 0;
    double accuracy = 0.0;
};

int64_t parse_int(const std::string& s, const std::string& where) {
    int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw SchemaError(where + ": '" + s + "' is not an integer");
    return v;
}

double parse_double(const std::string& s, const std::string& where) {
    if (s.empty()) throw SchemaError(where + ": empty number");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        throw SchemaError(where + ": '" + s + "' is not a number");
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

}  // namespace

PlotdataResult sweep_plotdata(const std::vector<std::string>& runs_csv_paths) {
    if (runs_csv_paths.empty()) throw ConfigError("plotdata needs at least one runs file");

    std::vector<RunRow> rows;
    for (const std::string& path : runs_csv_paths) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open " + path);
        std::string line;
        if (!std::getline(in, line)) throw SchemaError(path + ": empty file");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line != "model,g,seed,accuracy")
            throw SchemaError(path + ": expected header 'model,g,seed,accuracy', got '" + line +
                              "'");
        int64_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const auto fields = split_csv(line);
            const std::string where = path + ":" + std::to_string(lineno);
            if (fields.size() != 4)
                throw SchemaError(where + ": expected 4 columns, got " +
                                  std::to_string(fields.size()));
            if (fields[0].empty()) throw SchemaError(where + ": empty model name");
            RunRow r;
            r.model = fields[0];
            r.g = parse_int(fields[1], where);
            parse_int(fields[2], where);  // seed: validated, not aggregated
            r.accuracy = parse_double(fields[3], where);
            rows.push_back(std::move(r));
        }
    }

    std::vector<std::string> models;  // first-appearance order
    std::set<int64_t> gs;
    std::map<std::pair<std::string, int64_t>, std::vector<double>> cells;
    for (const RunRow& r : rows) {
        if (std::find(models.begin(), models.end(), r.model) == models.end())
            models.push_back(r.model);
        gs.insert(r.g);
        cells[{r.model, r.g}].push_back(r.accuracy);
    }

    PlotdataResult out;
    std::ostringstream csv;
    csv << "model,g,mean_acc,std_acc\n";
    for (const std::string& model : models) {
        for (int64_t g : gs) {
            const auto it = cells.find({model, g});
            if (it == cells.end()) {
                out.warnings.push_back("no runs for " + model + " g=" + std::to_string(g) +
                                       "; row omitted");
                continue;
            }
            const std::vector<double>& accs = it->second;
            double mean = 0.0;
            for (double a : accs) mean += a;
            mean /= static_cast<double>(accs.size());
            double std_acc = 0.0;
            if (accs.size() > 1) {
                double ss = 0.0;
                for (double a : accs) ss += (a - mean) * (a - mean);
                std_acc = std::sqrt(ss / static_cast<double>(accs.size() - 1));
            }
            csv << model << ',' << g << ',' << json(mean).dump() << ',' << json(std_acc).dump()
                << '\n';
        }
    }
    out.csv = csv.str();
    return out;
}

}  // namespace hst
