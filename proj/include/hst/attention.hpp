#pragma once

#include <vector>

#include "hst/tensor.hpp"
#include "hst/topology.hpp"

namespace hst {

enum class Mode { kTrain, kEval };

// Per-head projection parameters. There is no output projection: head
// contexts are concatenated along the feature axis and returned directly.
struct AttentionParams {
    Tensor w_q, w_k, w_v;  // [d,d]
    Tensor b_q, b_k, b_v;  // [d]
    int64_t heads = 1;

    static AttentionParams init(int64_t d, int64_t heads, Rng& rng);
    std::vector<Tensor> parameters() const;
    int64_t d() const { return w_q.dim(0); }
};

struct AttentionOutput {
    Tensor values;   // same shape as the input
    Tensor weights;  // [b,h,n,n] ([h,n,n] for rank-2 input) when requested
};

struct AttendOptions {
    bool scale = true;          // apply 1/sqrt(d/h); off reproduces the bare score equation
    bool keep_weights = false;  // retain attention probabilities in the output
    double attn_dropout = 0.0;  // applied to probabilities in train mode
    Mode mode = Mode::kEval;
    Rng* rng = nullptr;               // required when dropout is active in train mode
    const Mask* extra_mask = nullptr;  // [b,n,n] or [n,n], ANDed with the topology mask
};

// Masked multi-head attention over H ([n,d] or [b,n,d]) restricted to the
// topology's connectivity.
AttentionOutput attend(const Tensor& h, const AttentionParams& params, const SparseTopology& topo,
                       const AttendOptions& opts = {});

struct MlpParams {
    Tensor w1, b1, w2, b2;  // [d,dff],[dff],[dff,d],[d]

    static MlpParams init(int64_t d, int64_t dff, Rng& rng);
    std::vector<Tensor> parameters() const;
};

struct LayerNormParams {
    Tensor gain, bias;

    static LayerNormParams init(int64_t d);
    std::vector<Tensor> parameters() const;
};

struct BlockParams {
    AttentionParams attn;
    MlpParams mlp;
    LayerNormParams ln1, ln2;

    static BlockParams init(int64_t d, int64_t heads, int64_t dff, Rng& rng);
    std::vector<Tensor> parameters() const;
};

struct DropoutCfg {
    double attn = 0.0;
    double resid = 0.0;
};

// Pre-norm residual block: H + Drop(Attn(LN1(H))) then + Drop(MLP(LN2(.))).
Tensor transformer_block(const Tensor& h, const BlockParams& params, const SparseTopology& topo,
                         const DropoutCfg& dropout_cfg, Mode mode, Rng* rng = nullptr,
                         const Mask* extra_mask = nullptr, bool scale = true);

}  // namespace hst
