#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hst/error.hpp"

namespace hst {

// Sparse attention connectivity: global band + local blocks + optional random
// edges. Row i attends column j iff mask(i,j). Immutable after construction.
struct SparseTopology {
    int64_t n = 0;  // total length (after representative insertion when used)
    int64_t g = 0;  // leading global tokens
    int64_t w = 0;  // local block width, excluding the representative slot
    int64_t m = 0;  // block / representative count
    std::vector<uint8_t> mask;            // n*n row-major
    std::vector<int64_t> block_starts;    // m entries
    std::vector<int64_t> rep_positions;   // m entries when reps inserted, else empty
    std::optional<uint64_t> random_seed;
    int64_t r = 0;  // random columns added per row

    bool attends(int64_t i, int64_t j) const { return mask[i * n + j] != 0; }
    bool has_reps() const { return !rep_positions.empty(); }
    // Block index of token i, or -1 for global tokens.
    int64_t block_of(int64_t i) const;
    int64_t nnz() const;
};

// Global + local block pattern; with insert_reps, one representative slot is
// prepended to each block (total length n_base + m) and wired into its block.
// (n_base - g) must divide evenly by w; the error names the pad that would fix it.
SparseTopology build_topology(int64_t n_base, int64_t g, int64_t w, bool insert_reps = false,
                              int64_t r = 0, std::optional<uint64_t> seed = std::nullopt);

// All-true mask; equivalent to build_topology(n, n, 1).
SparseTopology full_topology(int64_t n);

// Cyclic shift moving each token k slots later; returns perm with
// rolled[i] = input[perm[i]]. The mask stays fixed; shifting the input
// against it realizes the shifted topology.
std::vector<int64_t> roll_topology_input_indices(const SparseTopology& topo, int64_t k);

// Number of src->dst paths through `layers` applications of the mask (edge
// i->j per layer iff mask(j,i)), counted in saturating uint64 arithmetic.
// With hierarchical=true each layer is followed by dense mixing among the
// representative positions.
uint64_t path_count(const SparseTopology& topo, int64_t layers, int64_t src, int64_t dst,
                    bool hierarchical = false);

// Path counts from src to every position at once (path_count's recurrence,
// one propagation instead of n).
std::vector<uint64_t> path_counts_from(const SparseTopology& topo, int64_t layers, int64_t src,
                                       bool hierarchical = false);

// Multiply-accumulate count of one attention layer over this mask:
// sum over rows of nnz(row)*d, plus m^2*d for the hierarchical pass.
uint64_t flop_estimate(const SparseTopology& topo, int64_t d, bool hierarchical);

// {n, g, w, m, rep_positions, mask_runs} with each mask row run-length
// encoded as alternating run lengths starting with a (possibly zero) false run.
std::string topology_json(const SparseTopology& topo);

// Inverse of topology_json. Block starts are re-derived from the standard
// layout (the format does not carry them); random-edge provenance (r, seed)
// is likewise absent, though any random edges stay present in the mask.
// Malformed JSON raises ParseError; structural problems raise SchemaError
// naming the offending field.
SparseTopology topology_from_json(const std::string& text);

}  // namespace hst
