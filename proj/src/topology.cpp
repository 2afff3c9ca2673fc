#include "hst/topology.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <unordered_set>

#include "json.hpp"

namespace hst {

namespace {

uint64_t sat_add(uint64_t a, uint64_t b) {
    const uint64_t s = a + b;
    return s < a ? std::numeric_limits<uint64_t>::max() : s;
}

uint64_t sat_mul(uint64_t a, uint64_t b) {
    if (a == 0 || b == 0) return 0;
    if (a > std::numeric_limits<uint64_t>::max() / b) return std::numeric_limits<uint64_t>::max();
    return a * b;
}

}  // namespace

int64_t SparseTopology::block_of(int64_t i) const {
    if (i < g) return -1;
    const int64_t bw = w + (has_reps() ? 1 : 0);
    return (i - g) / bw;
}

int64_t SparseTopology::nnz() const {
    int64_t c = 0;
    for (uint8_t v : mask) c += v;
    return c;
}

SparseTopology build_topology(int64_t n_base, int64_t g, int64_t w, bool insert_reps, int64_t r,
                              std::optional<uint64_t> seed) {
    if (n_base < 1) throw ConfigError("sequence length must be positive, got " +
                                      std::to_string(n_base));
    if (g < 0) throw ConfigError("global token count must be nonnegative, got " +
                                 std::to_string(g));
    if (w < 1) throw ConfigError("block width must be positive, got " + std::to_string(w));
    if (g > n_base)
        throw ConfigError("global token count " + std::to_string(g) + " exceeds sequence length " +
                          std::to_string(n_base));
    if (r < 0) throw ConfigError("random column count must be nonnegative");
    const int64_t body = n_base - g;
    if (body % w != 0) {
        const int64_t pad = w - body % w;
        throw ConfigError("sequence body " + std::to_string(body) + " not divisible by block width " +
                          std::to_string(w) + "; pad the sequence by " + std::to_string(pad) +
                          " tokens (to length " + std::to_string(n_base + pad) + ")");
    }

    SparseTopology t;
    t.g = g;
    t.w = w;
    t.m = body / w;
    t.n = n_base + (insert_reps ? t.m : 0);
    t.r = r;
    t.random_seed = seed;
    const int64_t bw = w + (insert_reps ? 1 : 0);
    for (int64_t b = 0; b < t.m; ++b) {
        t.block_starts.push_back(g + b * bw);
        if (insert_reps) t.rep_positions.push_back(g + b * bw);
    }

    t.mask.assign(t.n * t.n, 0);
    for (int64_t i = 0; i < t.n; ++i) {
        const int64_t bi = t.block_of(i);
        for (int64_t j = 0; j < t.n; ++j) {
            if (i < g || j < g || (bi >= 0 && bi == t.block_of(j))) t.mask[i * t.n + j] = 1;
        }
    }

    if (r > 0) {
        if (r > t.n) throw ConfigError("random column count " + std::to_string(r) +
                                       " exceeds sequence length " + std::to_string(t.n));
        std::mt19937_64 rng(seed.value_or(0));
        std::uniform_int_distribution<int64_t> col(0, t.n - 1);
        for (int64_t i = 0; i < t.n; ++i) {
            std::unordered_set<int64_t> picked;
            while (static_cast<int64_t>(picked.size()) < r) picked.insert(col(rng));
            for (int64_t j : picked) t.mask[i * t.n + j] = 1;
        }
    }
    return t;
}

SparseTopology full_topology(int64_t n) { return build_topology(n, n, 1, false); }

std::vector<int64_t> roll_topology_input_indices(const SparseTopology& topo, int64_t k) {
    if (k < 0 || k >= topo.n)
        throw DomainError("roll amount " + std::to_string(k) + " outside [0," +
                          std::to_string(topo.n) + ")");
    std::vector<int64_t> perm(topo.n);
    for (int64_t i = 0; i < topo.n; ++i) perm[i] = (i - k + topo.n) % topo.n;
    return perm;
}

std::vector<uint64_t> path_counts_from(const SparseTopology& topo, int64_t layers, int64_t src,
                                       bool hierarchical) {
    if (layers < 1) throw DomainError("path_count: layers must be >= 1");
    const int64_t n = topo.n;
    if (src < 0 || src >= n) throw IndexError("path_count: token index out of range");
    std::vector<uint64_t> v(n, 0), next(n, 0);
    v[src] = 1;
    for (int64_t l = 0; l < layers; ++l) {
        std::fill(next.begin(), next.end(), 0);
        for (int64_t j = 0; j < n; ++j) {
            uint64_t acc = 0;
            const uint8_t* row = topo.mask.data() + j * n;  // row j: edges i->j
            for (int64_t i = 0; i < n; ++i)
                if (row[i] && v[i]) acc = sat_add(acc, v[i]);
            next[j] = acc;
        }
        if (hierarchical && topo.has_reps()) {
            uint64_t rep_sum = 0;
            for (int64_t p : topo.rep_positions) rep_sum = sat_add(rep_sum, next[p]);
            for (int64_t p : topo.rep_positions) next[p] = rep_sum;
        }
        v.swap(next);
    }
    return v;
}

uint64_t path_count(const SparseTopology& topo, int64_t layers, int64_t src, int64_t dst,
                    bool hierarchical) {
    if (dst < 0 || dst >= topo.n) throw IndexError("path_count: token index out of range");
    return path_counts_from(topo, layers, src, hierarchical)[dst];
}

uint64_t flop_estimate(const SparseTopology& topo, int64_t d, bool hierarchical) {
    uint64_t macs = sat_mul(static_cast<uint64_t>(topo.nnz()), static_cast<uint64_t>(d));
    if (hierarchical)
        macs = sat_add(macs, sat_mul(sat_mul(static_cast<uint64_t>(topo.m),
                                             static_cast<uint64_t>(topo.m)),
                                     static_cast<uint64_t>(d)));
    return macs;
}

std::string topology_json(const SparseTopology& topo) {
    nlohmann::json j;
    j["n"] = topo.n;
    j["g"] = topo.g;
    j["w"] = topo.w;
    j["m"] = topo.m;
    j["rep_positions"] = topo.rep_positions;
    nlohmann::json rows = nlohmann::json::array();
    for (int64_t i = 0; i < topo.n; ++i) {
        nlohmann::json runs = nlohmann::json::array();
        uint8_t cur = 0;  // rows start with a (possibly empty) run of falses
        int64_t len = 0;
        for (int64_t col = 0; col < topo.n; ++col) {
            const uint8_t v = topo.mask[i * topo.n + col];
            if (v == cur) {
                ++len;
            } else {
                runs.push_back(len);
                cur = v;
                len = 1;
            }
        }
        runs.push_back(len);
        rows.push_back(std::move(runs));
    }
    j["mask_runs"] = std::move(rows);
    return j.dump(2);
}

namespace {

int64_t take_int(const nlohmann::json& j, const char* field) {
    if (!j.contains(field)) throw SchemaError(std::string("topology json: missing '") + field + "'");
    const auto& v = j.at(field);
    if (!v.is_number_integer())
        throw SchemaError(std::string("topology json: '") + field + "' must be an integer");
    return v.get<int64_t>();
}

}  // namespace

SparseTopology topology_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("topology json: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("topology json: top level must be an object");

    SparseTopology t;
    t.n = take_int(j, "n");
    t.g = take_int(j, "g");
    t.w = take_int(j, "w");
    t.m = take_int(j, "m");
    if (t.n < 1) throw SchemaError("topology json: 'n' must be positive");
    if (t.g < 0 || t.g > t.n) throw SchemaError("topology json: 'g' outside [0, n]");
    if (t.w < 1) throw SchemaError("topology json: 'w' must be positive");
    if (t.m < 0) throw SchemaError("topology json: 'm' must be nonnegative");

    if (!j.contains("rep_positions") || !j.at("rep_positions").is_array())
        throw SchemaError("topology json: 'rep_positions' must be an array");
    for (const auto& p : j.at("rep_positions")) {
        if (!p.is_number_integer())
            throw SchemaError("topology json: 'rep_positions' entries must be integers");
        const int64_t v = p.get<int64_t>();
        if (v < 0 || v >= t.n)
            throw SchemaError("topology json: rep position " + std::to_string(v) +
                              " outside [0, n)");
        t.rep_positions.push_back(v);
    }
    if (!t.rep_positions.empty() && static_cast<int64_t>(t.rep_positions.size()) != t.m)
        throw SchemaError("topology json: " + std::to_string(t.rep_positions.size()) +
                          " rep positions for m=" + std::to_string(t.m));

    const int64_t bw = t.w + (t.rep_positions.empty() ? 0 : 1);
    if (t.g + t.m * bw != t.n)
        throw SchemaError("topology json: g + m*block != n (" + std::to_string(t.g) + " + " +
                          std::to_string(t.m) + "*" + std::to_string(bw) +
                          " != " + std::to_string(t.n) + ")");
    for (int64_t b = 0; b < t.m; ++b) t.block_starts.push_back(t.g + b * bw);

    if (!j.contains("mask_runs") || !j.at("mask_runs").is_array())
        throw SchemaError("topology json: 'mask_runs' must be an array");
    const auto& rows = j.at("mask_runs");
    if (static_cast<int64_t>(rows.size()) != t.n)
        throw SchemaError("topology json: " + std::to_string(rows.size()) + " mask rows for n=" +
                          std::to_string(t.n));
    t.mask.assign(t.n * t.n, 0);
    for (int64_t i = 0; i < t.n; ++i) {
        const auto& runs = rows.at(i);
        if (!runs.is_array() || runs.empty())
            throw SchemaError("topology json: mask_runs row " + std::to_string(i) +
                              " must be a nonempty array");
        int64_t col = 0;
        uint8_t cur = 0;  // runs alternate starting from false
        for (size_t k = 0; k < runs.size(); ++k) {
            if (!runs.at(k).is_number_integer() || runs.at(k).get<int64_t>() < 0)
                throw SchemaError("topology json: mask_runs row " + std::to_string(i) +
                                  " has a non-count entry");
            const int64_t len = runs.at(k).get<int64_t>();
            if (len == 0 && k > 0)
                throw SchemaError("topology json: mask_runs row " + std::to_string(i) +
                                  " has a zero-length run");
            if (col + len > t.n)
                throw SchemaError("topology json: mask_runs row " + std::to_string(i) +
                                  " exceeds n");
            if (cur) std::fill_n(t.mask.begin() + i * t.n + col, len, uint8_t{1});
            col += len;
            cur = !cur;
        }
        if (col != t.n)
            throw SchemaError("topology json: mask_runs row " + std::to_string(i) + " sums to " +
                              std::to_string(col) + ", not n=" + std::to_string(t.n));
    }
    return t;
}

}  // namespace hst
