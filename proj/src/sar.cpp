#include "hst/sar.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "hst/error.hpp"

namespace hst {

namespace {
constexpr double kSumTol = 1e-8;
constexpr double kLogFloor = 1e-12;

void check_rows_normalized(const Tensor& t, const char* which) {
    const int64_t c = t.dim(-1);
    const int64_t rows = t.numel() / c;
    auto v = t.values();
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0;
        for (int64_t j = 0; j < c; ++j) s += v[r * c + j];
        if (!(std::abs(s - 1.0) <= kSumTol))
            throw ContractError(std::string(which) + " row " + std::to_string(r) +
                                " sums to " + std::to_string(s) + ", not 1");
    }
}
}  // namespace

Tensor bidirectional_kl(const Tensor& p, const Tensor& q) {
    if (!p.defined() || !q.defined()) throw ContractError("bidirectional_kl: undefined input");
    if (p.shape() != q.shape())
        throw ShapeError("bidirectional_kl: shapes " + shape_str(p.shape()) + " vs " +
                         shape_str(q.shape()));
    if (p.ndim() < 1 || p.dim(-1) < 1) throw ShapeError("bidirectional_kl: empty distribution");
    check_rows_normalized(p, "p");
    check_rows_normalized(q, "q");

    // 0.5 * sum (p-q) * (log p - log q) == 0.5*[KL(p||q)+KL(q||p)] with the
    // raw values as weights and the clamped ones inside the logs.
    Tensor ldiff = sub(log(clamp_min(p, kLogFloor)), log(clamp_min(q, kLogFloor)));
    Tensor prod = mul(sub(p, q), ldiff);
    const int64_t rows = p.numel() / p.dim(-1);
    return scale(sum(prod), 0.5 / static_cast<double>(rows));
}

LossBreakdown sar_loss(const SequenceBatch& batch, const HstModel& model, const SarConfig& sar,
                       Mode mode, Rng* rng) {
    LossBreakdown out;
    if (!sar.enabled) {
        ForwardOutput fwd = model_forward(batch, model, mode, rng);
        out.total = cross_entropy(fwd.logits, batch.labels);
        out.nll = out.total.item();
        out.probs1 = fwd.probs;
        return out;
    }

    ForwardOutput pass1 = model_forward(batch, model, mode, rng);
    RollSpec roll;
    if (!sar.dropout_only) roll = {sar.roll_tokens, sar.roll_layer};
    ForwardOutput pass2 = model_forward(batch, model, mode, rng, roll);

    // Explicit statement order keeps the tape order (and therefore gradient
    // accumulation rounding) reproducible by an external two-pass loop.
    Tensor nll1 = cross_entropy(pass1.logits, batch.labels);
    Tensor nll2 = cross_entropy(pass2.logits, batch.labels);
    Tensor nll = add(nll1, nll2);
    out.nll = nll.item();
    out.probs1 = pass1.probs;
    out.probs2 = pass2.probs;

    // A diverging model emits non-finite probabilities; skip the KL (its
    // normalization contract no longer applies) and let the non-finite NLL
    // reach the caller's divergence check.
    if (!all_finite(pass1.probs) || !all_finite(pass2.probs)) {
        out.sar = std::numeric_limits<double>::quiet_NaN();
        out.total = nll;
        return out;
    }

    if (sar.alpha > 0) {
        Tensor kl = bidirectional_kl(pass1.probs, pass2.probs);
        out.sar = kl.item();
        out.total = add(nll, scale(kl, sar.alpha));
    } else {
        {
            NoGradGuard no_grad;
            out.sar = bidirectional_kl(pass1.probs, pass2.probs).item();
        }
        out.total = nll;
    }
    return out;
}

LossBreakdown sar_step(const SequenceBatch& batch, const HstModel& model, const SarConfig& sar,
                       Mode mode, Rng* rng) {
    LossBreakdown out = sar_loss(batch, model, sar, mode, rng);
    backward(out.total);
    return out;
}

}  // namespace hst
