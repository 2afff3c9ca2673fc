#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hst/topology.hpp"

namespace hst {

// Connectivity analysis of a topology under the layered information-flow
// model used by path_count: per layer, position j receives from i iff j
// attends i, followed (when hierarchical) by dense mixing among the
// representative positions.
struct FlowReport {
    int64_t n = 0, g = 0, w = 0, m = 0;
    int64_t layers = 0;
    bool hierarchical = false;

    // n*n row-major [src*n + dst]: minimum layers for information at src to
    // reach dst. 0 on the diagonal, -1 when unreachable within `layers`.
    std::vector<int64_t> depth;

    // Over ordered cross-block pairs of original tokens (non-global,
    // non-representative, different blocks): exact-`layers` path count ->
    // number of pairs with that count.
    std::map<uint64_t, int64_t> path_histogram;
    int64_t cross_pairs = 0;
    int64_t unreachable_cross_pairs = 0;  // cross-block pairs with depth -1

    // Union over cross-block original pairs of the depth-2 relay positions
    // (states holding the information between the two layers). Sorted.
    std::vector<int64_t> bottleneck_relays;
    int64_t bottleneck_width = 0;  // = bottleneck_relays.size()
};

// hierarchical=true requires a topology with representatives.
FlowReport flow_report(const SparseTopology& topo, int64_t layers, bool hierarchical);
std::string flow_report_json(const FlowReport& r);

// One row of the attention-cost table. The sparse and hierarchical columns
// share one topology (built with representatives), so hier_delta is exactly
// the m^2*d mixing cost; the dense baseline is a full-attention model over
// the raw n_base-token input.
struct FlopRow {
    int64_t n_base = 0, g = 0, w = 0, m = 0, d = 0;
    int64_t n_hst = 0;  // post-insertion length n_base + m
    uint64_t sparse_macs = 0;  // hierarchy off
    uint64_t hst_macs = 0;     // hierarchy on
    uint64_t hier_delta = 0;   // hst - sparse = m^2*d
    uint64_t dense_macs = 0;   // n_base^2 * d
    double sparse_over_dense = 0.0;
    double hst_over_dense = 0.0;
};

FlopRow flop_row(int64_t n_base, int64_t g, int64_t w, int64_t d);
std::string flop_table_csv(const std::vector<FlopRow>& rows);

// Merges one or more runs.csv files (model,g,seed,accuracy) into the sweep
// summary layout (model,g,mean_acc,std_acc; ddof=1 spread, exact 0.0 for a
// single run). Models appear in first-appearance order, g ascending within
// each; a (model, g) cell missing from the merged grid is omitted with a
// warning. A single input file reproduces its own sweep's summary.csv byte
// for byte. Header or value mismatches raise SchemaError naming the file.
struct PlotdataResult {
    std::string csv;
    std::vector<std::string> warnings;
};

PlotdataResult sweep_plotdata(const std::vector<std::string>& runs_csv_paths);

}  // namespace hst
