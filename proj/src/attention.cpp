#include "hst/attention.hpp"

#include <cmath>

namespace hst {

AttentionParams AttentionParams::init(int64_t d, int64_t heads, Rng& rng) {
    if (heads < 1 || d % heads != 0)
        throw ConfigError("head count " + std::to_string(heads) + " must divide hidden size " +
                          std::to_string(d));
    AttentionParams p;
    p.heads = heads;
    p.w_q = xavier_uniform(d, d, rng, true);
    p.w_k = xavier_uniform(d, d, rng, true);
    p.w_v = xavier_uniform(d, d, rng, true);
    p.b_q = Tensor::zeros({d}, true);
    p.b_k = Tensor::zeros({d}, true);
    p.b_v = Tensor::zeros({d}, true);
    return p;
}

std::vector<Tensor> AttentionParams::parameters() const {
    return {w_q, w_k, w_v, b_q, b_k, b_v};
}

namespace {

// [b,n,d] -> [b,h,n,dh]
Tensor split_heads(const Tensor& x, int64_t h) {
    const int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    return permute(reshape(x, {b, n, h, d / h}), {0, 2, 1, 3});
}

}  // namespace

AttentionOutput attend(const Tensor& h, const AttentionParams& params, const SparseTopology& topo,
                       const AttendOptions& opts) {
    if (!h.defined()) throw ContractError("attend: undefined input");
    if (h.ndim() != 2 && h.ndim() != 3)
        throw ShapeError("attend: input must be [n,d] or [b,n,d], got " + shape_str(h.shape()));
    const bool batched = h.ndim() == 3;
    Tensor x = batched ? h : reshape(h, {1, h.dim(0), h.dim(1)});
    const int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    if (n != topo.n)
        throw ShapeError("attend: input has " + std::to_string(n) + " rows but topology expects " +
                         std::to_string(topo.n));
    if (d != params.d())
        throw ShapeError("attend: input width " + std::to_string(d) + " vs params width " +
                         std::to_string(params.d()));
    const int64_t nh = params.heads, dh = d / nh;

    Tensor q = split_heads(add(matmul(x, params.w_q), params.b_q), nh);
    Tensor k = split_heads(add(matmul(x, params.w_k), params.b_k), nh);
    Tensor v = split_heads(add(matmul(x, params.w_v), params.b_v), nh);

    Tensor scores = matmul(q, permute(k, {0, 1, 3, 2}));  // [b,h,n,n]
    if (opts.scale) scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));

    Mask eff;
    if (opts.extra_mask && opts.extra_mask->defined()) {
        const Mask& em = *opts.extra_mask;
        if (em.shape != Shape{b, n, n} && em.shape != Shape{n, n})
            throw ShapeError("attend: extra mask shape " + shape_str(em.shape) +
                             ", expected [n,n] or [b,n,n]");
        const int64_t mb = em.shape.size() == 3 ? b : 1;
        eff.shape = {mb, 1, n, n};
        eff.data.resize(mb * n * n);
        for (int64_t bi = 0; bi < mb; ++bi)
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j)
                    eff.data[(bi * n + i) * n + j] =
                        topo.mask[i * n + j] & em.data[(bi * n + i) * n + j];
    } else {
        eff.shape = {n, n};
        eff.data = topo.mask;
    }

    Tensor probs = softmax_rows(scores, &eff);
    if (opts.mode == Mode::kTrain && opts.attn_dropout > 0.0) {
        if (!opts.rng) throw ContractError("attend: dropout requires an rng in train mode");
        probs = dropout(probs, opts.attn_dropout, *opts.rng, true);
    }

    Tensor ctx = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {b, n, d});

    AttentionOutput out;
    out.values = batched ? ctx : reshape(ctx, {n, d});
    if (opts.keep_weights)
        out.weights = batched ? probs : reshape(probs, {nh, n, n});
    return out;
}

MlpParams MlpParams::init(int64_t d, int64_t dff, Rng& rng) {
    MlpParams p;
    p.w1 = xavier_uniform(d, dff, rng, true);
    p.b1 = Tensor::zeros({dff}, true);
    p.w2 = xavier_uniform(dff, d, rng, true);
    p.b2 = Tensor::zeros({d}, true);
    return p;
}

std::vector<Tensor> MlpParams::parameters() const { return {w1, b1, w2, b2}; }

LayerNormParams LayerNormParams::init(int64_t d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

std::vector<Tensor> LayerNormParams::parameters() const { return {gain, bias}; }

BlockParams BlockParams::init(int64_t d, int64_t heads, int64_t dff, Rng& rng) {
    return {AttentionParams::init(d, heads, rng), MlpParams::init(d, dff, rng),
            LayerNormParams::init(d), LayerNormParams::init(d)};
}

std::vector<Tensor> BlockParams::parameters() const {
    std::vector<Tensor> ps = attn.parameters();
    for (auto& t : mlp.parameters()) ps.push_back(t);
    for (auto& t : ln1.parameters()) ps.push_back(t);
    for (auto& t : ln2.parameters()) ps.push_back(t);
    return ps;
}

Tensor transformer_block(const Tensor& h, const BlockParams& params, const SparseTopology& topo,
                         const DropoutCfg& dropout_cfg, Mode mode, Rng* rng,
                         const Mask* extra_mask, bool scale) {
    const bool train = mode == Mode::kTrain;
    if (train && (dropout_cfg.attn > 0 || dropout_cfg.resid > 0) && !rng)
        throw ContractError("transformer_block: dropout requires an rng in train mode");

    AttendOptions opts;
    opts.scale = scale;
    opts.attn_dropout = dropout_cfg.attn;
    opts.mode = mode;
    opts.rng = rng;
    opts.extra_mask = extra_mask;

    constexpr double kEps = 1e-5;
    Tensor a = attend(layer_norm(h, params.ln1.gain, params.ln1.bias, kEps), params.attn, topo,
                      opts).values;
    if (train && dropout_cfg.resid > 0) a = dropout(a, dropout_cfg.resid, *rng, true);
    Tensor x = add(h, a);

    Tensor f = layer_norm(x, params.ln2.gain, params.ln2.bias, kEps);
    f = add(matmul(gelu(add(matmul(f, params.mlp.w1), params.mlp.b1)), params.mlp.w2),
            params.mlp.b2);
    if (train && dropout_cfg.resid > 0) f = dropout(f, dropout_cfg.resid, *rng, true);
    return add(x, f);
}

}  // namespace hst
