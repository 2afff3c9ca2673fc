#include "hst/optim.hpp"

#include <cmath>
#include <string>

#include "hst/error.hpp"

namespace hst {

double scheduled_lr(double peak, const ScheduleConfig& sched, int64_t step) {
    if (step < 1) throw DomainError("schedule step must be >= 1");
    if (sched.warmup < 0) throw ConfigError("warmup must be nonnegative");
    if (sched.warmup > 0 && step <= sched.warmup)
        return peak * static_cast<double>(step) / static_cast<double>(sched.warmup);

    switch (sched.kind) {
        case Schedule::kNone:
            return peak;
        case Schedule::kRootSquare:
            if (sched.warmup < 1)
                throw ConfigError("ROOT_SQUARE decay needs warmup >= 1");
            return peak * std::sqrt(static_cast<double>(sched.warmup) / static_cast<double>(step));
        case Schedule::kCosine: {
            if (sched.total_steps <= sched.warmup)
                throw ConfigError("COSINE decay needs total_steps > warmup");
            const double frac = static_cast<double>(std::min(step, sched.total_steps) - sched.warmup) /
                                static_cast<double>(sched.total_steps - sched.warmup);
            return peak * 0.5 * (1.0 + std::cos(M_PI * frac));
        }
        case Schedule::kPolynomial: {
            if (sched.total_steps <= sched.warmup)
                throw ConfigError("POLYNOMIAL decay needs total_steps > warmup");
            const double frac = static_cast<double>(std::min(step, sched.total_steps) - sched.warmup) /
                                static_cast<double>(sched.total_steps - sched.warmup);
            return peak * (1.0 - frac);
        }
    }
    throw DomainError("unknown schedule kind");
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg, ScheduleConfig sched)
    : params_(std::move(params)), cfg_(cfg), sched_(sched) {
    if (cfg_.lr < 0) throw ConfigError("learning rate must be nonnegative");
    if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
        throw ConfigError("betas must lie in [0, 1)");
    if (cfg_.eps <= 0) throw ConfigError("eps must be positive");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double lr = scheduled_lr(cfg_.lr, sched_, t_);
    last_lr_ = lr;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.values_mut();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t k = 0; k < w.size(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[k]);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace hst
