#include "hst/model.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "hst/config_io.hpp"
#include "hst/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hst {

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian float64");

HstModelConfig HstModelConfig::normalized() const {
    HstModelConfig c = *this;
    if (c.weight_sharing) c.hier_init = HierInit::kShared;
    if (c.hier_init == HierInit::kShared) c.weight_sharing = true;
    return c;
}

void HstModelConfig::validate() const {
    if (n_base <= 0) throw ConfigError("n_base must be positive");
    if (d <= 0 || layers <= 0 || heads <= 0) throw ConfigError("d, layers, heads must be positive");
    if (d % heads != 0)
        throw ConfigError("d=" + std::to_string(d) + " not divisible by heads=" +
                          std::to_string(heads));
    if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (pad_id < 0 || pad_id >= vocab_size || rep_id < 0 || rep_id >= vocab_size)
        throw ConfigError("pad_id and rep_id must lie in [0, vocab_size)");
    if (pad_id == rep_id) throw ConfigError("pad_id and rep_id must differ");
    if (attn_dropout < 0.0 || attn_dropout >= 1.0 || resid_dropout < 0.0 || resid_dropout >= 1.0)
        throw ConfigError("dropout rates must lie in [0, 1)");
    if (pooling == Pooling::kClsGOnly && g < 1)
        throw ConfigError("CLS_G_ONLY pooling needs at least one global token");
    if (weight_sharing != (hier_init == HierInit::kShared))
        throw ConfigError("weight_sharing=true and hier_init=SHARED imply each other");
    if (weight_sharing && !hierarchical_enabled)
        throw ConfigError("weight_sharing requires hierarchical_enabled");
    // Delegates the g/w/divisibility rules (and their pad-hint message).
    build_topology(n_base, g, w, hierarchical_enabled);
}

bool SequenceBatch::all_real() const {
    return std::all_of(real.begin(), real.end(), [](uint8_t v) { return v != 0; });
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> insert_representatives(
    const std::vector<int64_t>& ids, int64_t g, int64_t w, int64_t rep_id) {
    const auto n_base = static_cast<int64_t>(ids.size());
    SparseTopology topo = build_topology(n_base, g, w, true);  // validates, yields positions
    std::vector<int64_t> out;
    out.reserve(n_base + topo.m);
    out.insert(out.end(), ids.begin(), ids.begin() + g);
    for (int64_t b = 0; b < topo.m; ++b) {
        out.push_back(rep_id);
        const int64_t src = g + b * w;
        out.insert(out.end(), ids.begin() + src, ids.begin() + src + w);
    }
    return {std::move(out), topo.rep_positions};
}

int64_t padded_length(int64_t t, int64_t g, int64_t w) {
    if (t <= 0 || g < 0 || w < 1 || g > t) throw ConfigError("invalid length/g/w for padding");
    const int64_t body = t - g;
    return t + (w - body % w) % w;
}

SequenceBatch prepare_batch(const std::vector<std::vector<int64_t>>& rows,
                            const std::vector<int64_t>& labels, const HstModelConfig& raw_cfg) {
    const HstModelConfig cfg = raw_cfg.normalized();
    if (rows.empty()) throw ShapeError("prepare_batch: empty batch");
    if (labels.size() != rows.size())
        throw ShapeError("prepare_batch: " + std::to_string(rows.size()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
    const auto t = static_cast<int64_t>(rows.front().size());
    if (t > cfg.n_base)
        throw ShapeError("prepare_batch: rows of length " + std::to_string(t) +
                         " exceed n_base=" + std::to_string(cfg.n_base));

    SequenceBatch batch;
    batch.b = static_cast<int64_t>(rows.size());
    batch.labels = labels;
    for (int64_t label : labels)
        if (label < 0 || label >= cfg.num_classes)
            throw DomainError("prepare_batch: label " + std::to_string(label) + " out of range");

    for (const auto& row : rows) {
        if (static_cast<int64_t>(row.size()) != t)
            throw ShapeError("prepare_batch: rows have mixed lengths");
        std::vector<int64_t> padded = row;
        padded.resize(cfg.n_base, cfg.pad_id);
        for (int64_t id : padded)
            if (id < 0 || id >= cfg.vocab_size)
                throw DomainError("prepare_batch: token id " + std::to_string(id) +
                                  " outside vocab of " + std::to_string(cfg.vocab_size));

        if (cfg.hierarchical_enabled) {
            auto [aug, reps] = insert_representatives(padded, cfg.g, cfg.w, cfg.rep_id);
            const auto n = static_cast<int64_t>(aug.size());
            batch.n = n;
            std::vector<uint8_t> real(n, 0);
            for (int64_t i = 0; i < n; ++i) real[i] = aug[i] != cfg.pad_id;
            // A representative is real iff its block holds a real token.
            for (int64_t r = 0; r < static_cast<int64_t>(reps.size()); ++r) {
                uint8_t any = 0;
                for (int64_t j = 1; j <= cfg.w; ++j) any |= real[reps[r] + j];
                real[reps[r]] = any;
            }
            batch.ids.insert(batch.ids.end(), aug.begin(), aug.end());
            batch.real.insert(batch.real.end(), real.begin(), real.end());
        } else {
            batch.n = cfg.n_base;
            batch.ids.insert(batch.ids.end(), padded.begin(), padded.end());
            for (int64_t id : padded) batch.real.push_back(id != cfg.pad_id);
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Model assembly

HstModel HstModel::init(const HstModelConfig& raw_cfg, uint64_t seed) {
    HstModel model;
    model.cfg = raw_cfg.normalized();
    model.cfg.validate();
    const auto& cfg = model.cfg;
    model.topo = build_topology(cfg.n_base, cfg.g, cfg.w, cfg.hierarchical_enabled);

    Rng rng(seed);
    model.tok_embed = randn({cfg.vocab_size, cfg.d}, rng, 0.02, true);
    model.pos_embed = randn({model.topo.n, cfg.d}, rng, 0.02, true);
    for (int64_t l = 0; l < cfg.layers; ++l) {
        model.blocks.push_back(BlockParams::init(cfg.d, cfg.heads, cfg.mlp_hidden(), rng));
        if (cfg.hierarchical_enabled) {
            switch (cfg.hier_init) {
                case HierInit::kRandom:
                    model.hier.push_back(AttentionParams::init(cfg.d, cfg.heads, rng));
                    break;
                case HierInit::kWarmStartCopy: {
                    AttentionParams p;
                    const AttentionParams& src = model.blocks.back().attn;
                    p.w_q = src.w_q.clone().set_requires_grad(true);
                    p.w_k = src.w_k.clone().set_requires_grad(true);
                    p.w_v = src.w_v.clone().set_requires_grad(true);
                    p.b_q = src.b_q.clone().set_requires_grad(true);
                    p.b_k = src.b_k.clone().set_requires_grad(true);
                    p.b_v = src.b_v.clone().set_requires_grad(true);
                    p.heads = src.heads;
                    model.hier.push_back(std::move(p));
                    break;
                }
                case HierInit::kShared:
                    // Handle copies alias the storage: one set of weights,
                    // gradients from both passes land in the same buffers.
                    model.hier.push_back(model.blocks.back().attn);
                    break;
            }
        }
    }
    model.w_out = xavier_uniform(cfg.d, cfg.num_classes, rng, true);
    return model;
}

std::vector<std::pair<std::string, Tensor>> HstModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed.tok", tok_embed);
    out.emplace_back("embed.pos", pos_embed);
    auto attn_entries = [&out](const std::string& prefix, const AttentionParams& a) {
        out.emplace_back(prefix + ".w_q", a.w_q);
        out.emplace_back(prefix + ".w_k", a.w_k);
        out.emplace_back(prefix + ".w_v", a.w_v);
        out.emplace_back(prefix + ".b_q", a.b_q);
        out.emplace_back(prefix + ".b_k", a.b_k);
        out.emplace_back(prefix + ".b_v", a.b_v);
    };
    for (size_t l = 0; l < blocks.size(); ++l) {
        const std::string p = "layers." + std::to_string(l);
        const BlockParams& b = blocks[l];
        attn_entries(p + ".attn", b.attn);
        out.emplace_back(p + ".ln1.gain", b.ln1.gain);
        out.emplace_back(p + ".ln1.bias", b.ln1.bias);
        out.emplace_back(p + ".mlp.w1", b.mlp.w1);
        out.emplace_back(p + ".mlp.b1", b.mlp.b1);
        out.emplace_back(p + ".mlp.w2", b.mlp.w2);
        out.emplace_back(p + ".mlp.b2", b.mlp.b2);
        out.emplace_back(p + ".ln2.gain", b.ln2.gain);
        out.emplace_back(p + ".ln2.bias", b.ln2.bias);
        if (l < hier.size()) attn_entries(p + ".hier", hier[l]);
    }
    out.emplace_back("head.w_out", w_out);
    return out;
}

std::vector<Tensor> HstModel::parameters() const {
    // Deduplicated by storage so optimizers step shared weights exactly once.
    std::vector<Tensor> out;
    std::unordered_set<const detail::TensorImpl*> seen;
    for (const auto& [name, t] : named_parameters())
        if (seen.insert(t.impl()).second) out.push_back(t);
    return out;
}

int64_t HstModel::distinct_parameter_elements() const {
    int64_t total = 0;
    for (const Tensor& t : parameters()) total += t.numel();
    return total;
}

// ---------------------------------------------------------------------------
// Forward pieces

Tensor hst_layer_forward(const Tensor& h, const BlockParams& block, const AttentionParams* hier,
                         const SparseTopology& topo, const SparseTopology* hier_topo,
                         const HstModelConfig& cfg, Mode mode, Rng* rng, const Mask* extra_mask,
                         const Mask* hier_extra_mask) {
    DropoutCfg drop{cfg.attn_dropout, cfg.resid_dropout};
    Tensor hs = transformer_block(h, block, topo, drop, mode, rng, extra_mask, cfg.scale_scores);
    if (hier == nullptr || !topo.has_reps()) return hs;

    SparseTopology local;
    if (hier_topo == nullptr) {
        local = full_topology(topo.m);
        hier_topo = &local;
    }
    if (hier_topo->n != topo.m)
        throw ShapeError("hierarchical topology covers " + std::to_string(hier_topo->n) +
                         " rows, expected " + std::to_string(topo.m));

    Tensor reps = gather_rows(hs, topo.rep_positions);
    AttendOptions opts;
    opts.scale = cfg.scale_scores;
    opts.attn_dropout = cfg.attn_dropout;
    opts.mode = mode;
    opts.rng = rng;
    opts.extra_mask = hier_extra_mask;
    Tensor mixed = attend(reps, *hier, *hier_topo, opts).values;
    if (cfg.scatter_residual) mixed = add(reps, mixed);
    return scatter_rows(hs, topo.rep_positions, mixed);
}

Tensor pool_representatives(const Tensor& reps, Pooling mode) {
    if (mode == Pooling::kClsGOnly)
        throw ConfigError("CLS_G_ONLY pools a hidden state, not the representative matrix");
    if (reps.ndim() != 2 && reps.ndim() != 3)
        throw ShapeError("pool_representatives expects [m,d] or [b,m,d], got " +
                         shape_str(reps.shape()));
    if (reps.dim(-2) == 0) throw ConfigError("no representative rows to pool");
    return mode == Pooling::kMean ? mean_rows(reps) : max_rows(reps);
}

Tensor classify(const Tensor& pooled, const Tensor& w_out) {
    if (w_out.ndim() != 2) throw ShapeError("classifier weights must be [d,c]");
    if (pooled.ndim() == 1) {
        Tensor logits = matmul(reshape(pooled, {1, pooled.dim(0)}), w_out);
        return reshape(softmax_rows(logits), {w_out.dim(1)});
    }
    if (pooled.ndim() != 2) throw ShapeError("pooled input must be [d] or [b,d]");
    return softmax_rows(matmul(pooled, w_out));
}

namespace {

// Row i sees column j when both carry information; a padded row keeps only
// itself so its softmax row stays well defined.
Mask build_pad_mask(const std::vector<uint8_t>& real, int64_t b, int64_t n) {
    Mask m;
    m.shape = {b, n, n};
    m.data.assign(static_cast<size_t>(b) * n * n, 0);
    for (int64_t bi = 0; bi < b; ++bi) {
        const uint8_t* row = real.data() + bi * n;
        uint8_t* out = m.data.data() + bi * n * n;
        for (int64_t i = 0; i < n; ++i)
            if (row[i]) {
                for (int64_t j = 0; j < n; ++j) out[i * n + j] = row[j];
            } else {
                out[i * n + i] = 1;
            }
    }
    return m;
}

Tensor pool_rows_masked(const Tensor& rows, const std::vector<uint8_t>& keep, Pooling mode) {
    const int64_t b = rows.dim(0), k = rows.dim(1);
    if (mode == Pooling::kMax) {
        Mask rm;
        rm.shape = {b, k};
        rm.data = keep;
        return max_rows(rows, &rm);
    }
    std::vector<double> wt(static_cast<size_t>(b) * k, 0.0);
    for (int64_t bi = 0; bi < b; ++bi) {
        int64_t count = 0;
        for (int64_t i = 0; i < k; ++i) count += keep[bi * k + i] != 0;
        if (count == 0) throw DomainError("sequence " + std::to_string(bi) + " has no rows to pool");
        for (int64_t i = 0; i < k; ++i)
            if (keep[bi * k + i]) wt[bi * k + i] = 1.0 / static_cast<double>(count);
    }
    return sum_rows(mul(rows, Tensor::from({b, k, 1}, std::move(wt))));
}

}  // namespace

ForwardOutput model_forward(const SequenceBatch& batch, const HstModel& model, Mode mode, Rng* rng,
                            const RollSpec& roll) {
    const HstModelConfig& cfg = model.cfg;
    const SparseTopology& topo = model.topo;
    if (batch.b <= 0) throw ShapeError("model_forward: empty batch");
    if (batch.n != topo.n)
        throw ShapeError("model_forward: batch length " + std::to_string(batch.n) +
                         " != topology length " + std::to_string(topo.n));
    const size_t want = static_cast<size_t>(batch.b) * batch.n;
    if (batch.ids.size() != want || batch.real.size() != want ||
        batch.labels.size() != static_cast<size_t>(batch.b))
        throw ShapeError("model_forward: inconsistent batch buffers");
    if (roll.k != 0 && (roll.layer < 0 || roll.layer >= cfg.layers))
        throw DomainError("roll layer " + std::to_string(roll.layer) + " outside [0, " +
                          std::to_string(cfg.layers) + ")");

    const int64_t b = batch.b, n = batch.n, d = cfg.d;
    Tensor h = add(embed(batch.ids, {b, n}, model.tok_embed), model.pos_embed);
    std::vector<uint8_t> cur_real = batch.real;
    const bool masked = !batch.all_real();

    const bool hier_on = !model.hier.empty() && topo.has_reps();
    SparseTopology hier_topo;
    if (hier_on) hier_topo = full_topology(topo.m);

    for (int64_t l = 0; l < cfg.layers; ++l) {
        if (roll.k != 0 && roll.layer == l) {
            const auto perm = roll_topology_input_indices(topo, roll.k);
            h = gather_rows(h, perm);
            std::vector<uint8_t> rolled(cur_real.size());
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t i = 0; i < n; ++i) rolled[bi * n + i] = cur_real[bi * n + perm[i]];
            cur_real = std::move(rolled);
        }
        Mask pad_mask, hier_pad_mask;
        const Mask* em = nullptr;
        const Mask* hem = nullptr;
        if (masked) {
            pad_mask = build_pad_mask(cur_real, b, n);
            em = &pad_mask;
            if (hier_on) {
                std::vector<uint8_t> rep_real(static_cast<size_t>(b) * topo.m);
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t r = 0; r < topo.m; ++r)
                        rep_real[bi * topo.m + r] = cur_real[bi * n + topo.rep_positions[r]];
                hier_pad_mask = build_pad_mask(rep_real, b, topo.m);
                hem = &hier_pad_mask;
            }
        }
        h = hst_layer_forward(h, model.blocks[l], hier_on ? &model.hier[l] : nullptr, topo,
                              hier_on ? &hier_topo : nullptr, cfg, mode, rng, em, hem);
    }

    Tensor pooled;
    if (cfg.pooling == Pooling::kClsGOnly) {
        pooled = reshape(gather_rows(h, std::vector<int64_t>{0}), {b, d});
    } else {
        Tensor rows;
        std::vector<uint8_t> keep;
        if (topo.has_reps()) {
            rows = gather_rows(h, topo.rep_positions);
            keep.resize(static_cast<size_t>(b) * topo.m);
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t r = 0; r < topo.m; ++r)
                    keep[bi * topo.m + r] = cur_real[bi * n + topo.rep_positions[r]];
        } else {
            rows = h;
            keep = cur_real;
        }
        const bool all = std::all_of(keep.begin(), keep.end(), [](uint8_t v) { return v != 0; });
        if (all)
            pooled = cfg.pooling == Pooling::kMean ? mean_rows(rows) : max_rows(rows);
        else
            pooled = pool_rows_masked(rows, keep, cfg.pooling);
    }

    ForwardOutput out;
    out.logits = matmul(pooled, model.w_out);
    out.probs = softmax_rows(out.logits);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_param_file(const fs::path& path, std::span<const double> values) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!f) throw IoError("short write to " + path.string());
}

void read_param_file(const fs::path& path, std::span<double> values) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<size_t>(f.tellg());
    if (bytes != values.size() * sizeof(double))
        throw SchemaError(path.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                          std::to_string(values.size() * sizeof(double)));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!f) throw IoError("short read from " + path.string());
}

}  // namespace

void save_checkpoint(const HstModel& model, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "hst-checkpoint-v1";
    manifest["config"] = model_config_to_json(model.cfg);

    std::unordered_map<const detail::TensorImpl*, std::string> first_name;
    json params = json::array();
    int file_idx = 0;
    for (const auto& [name, t] : model.named_parameters()) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape();
        auto it = first_name.find(t.impl());
        if (it != first_name.end()) {
            e["alias"] = it->second;
        } else {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%04d.bin", file_idx++);
            e["file"] = buf;
            write_param_file(fs::path(dir) / buf, t.values());
            first_name.emplace(t.impl(), name);
        }
        params.push_back(std::move(e));
    }
    manifest["parameters"] = std::move(params);

    std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write manifest in " + dir);
    f << manifest.dump(2) << '\n';
}

HstModel load_checkpoint(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(f);
    } catch (const json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "hst-checkpoint-v1")
        throw SchemaError("unrecognized checkpoint format in " + manifest_path.string());
    if (!manifest.contains("config") || !manifest.contains("parameters"))
        throw SchemaError("manifest missing config or parameters");

    HstModel model = HstModel::init(model_config_from_json(manifest["config"]), 0);
    std::unordered_map<std::string, Tensor> by_name;
    for (const auto& [name, t] : model.named_parameters()) by_name.emplace(name, t);

    size_t seen = 0;
    for (const auto& e : manifest["parameters"]) {
        const auto name = e.value("name", "");
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw SchemaError("manifest parameter '" + name + "' not in this model");
        Tensor t = it->second;
        const auto shape = e.value("shape", std::vector<int64_t>{});
        if (shape != t.shape())
            throw SchemaError("parameter '" + name + "' shape mismatch: manifest " +
                              shape_str(shape) + " vs model " + shape_str(t.shape()));
        if (e.contains("file")) {
            read_param_file(fs::path(dir) / e["file"].get<std::string>(), t.values_mut());
        } else if (e.contains("alias")) {
            auto src = by_name.find(e["alias"].get<std::string>());
            if (src == by_name.end() || !src->second.same_storage(t))
                throw SchemaError("parameter '" + name + "' aliases '" +
                                  e.value("alias", std::string{}) +
                                  "' in the manifest but not in this model");
        } else {
            throw SchemaError("parameter '" + name + "' has neither file nor alias");
        }
        ++seen;
    }
    if (seen != by_name.size())
        throw SchemaError("manifest lists " + std::to_string(seen) + " parameters, model has " +
                          std::to_string(by_name.size()));
    return model;
}

}  // namespace hst
