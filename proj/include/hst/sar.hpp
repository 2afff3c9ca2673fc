#pragma once

#include "hst/model.hpp"
#include "hst/tensor.hpp"

namespace hst {

struct SarConfig {
    bool enabled = true;
    double alpha = 1.0;
    int64_t roll_tokens = 1;
    int64_t roll_layer = 0;
    bool dropout_only = false;  // ablation: pass 2 keeps the topology, only redraws dropout
};

// 0.5 * [KL(p||q) + KL(q||p)] per row over the last axis, averaged across
// rows ([c] counts as one row). Rows must each sum to 1 within 1e-8
// (ContractError otherwise); values are clamped to 1e-12 before the logs.
Tensor bidirectional_kl(const Tensor& p, const Tensor& q);

struct LossBreakdown {
    Tensor total;     // taped scalar the caller can backward through
    double nll = 0;   // summed per-pass mean NLL
    double sar = 0;   // batch-mean bidirectional KL (0 for a single pass)
    Tensor probs1;    // pass-1 predictive distribution [b,c]
    Tensor probs2;    // pass-2 distribution; undefined when enabled=false
};

// Consistency-regularized loss. Pass 1 runs on the default topology; pass 2
// reruns the batch against the rolled topology (or with fresh dropout only),
// drawing its dropout from the same stream so the passes are independent.
// total = nll1 + nll2 + alpha * mean-KL. With alpha=0 the KL never enters
// the graph (it is still computed, outside the tape, for reporting), so the
// parameter trajectory is exactly the plain two-pass one. enabled=false is
// the single-pass baseline.
LossBreakdown sar_loss(const SequenceBatch& batch, const HstModel& model, const SarConfig& sar,
                       Mode mode, Rng* rng = nullptr);

// sar_loss followed by backward(total).
LossBreakdown sar_step(const SequenceBatch& batch, const HstModel& model, const SarConfig& sar,
                       Mode mode, Rng* rng = nullptr);

}  // namespace hst
