#pragma once

#include <cstdint>
#include <vector>

#include "hst/tensor.hpp"

namespace hst {

struct AdamConfig {
    double lr = 1e-3;  // peak rate; schedules scale it per step
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (applied directly to the weights)
};

enum class Schedule { kNone, kRootSquare, kCosine, kPolynomial };

struct ScheduleConfig {
    Schedule kind = Schedule::kNone;
    int64_t warmup = 0;
    int64_t total_steps = 0;  // required by COSINE and POLYNOMIAL
};

// Learning rate at 1-based step s: linear warmup to peak, then the decay
// branch (ROOT_SQUARE: peak*sqrt(warmup/s); COSINE: half-cosine to zero at
// total_steps; POLYNOMIAL: linear to zero at total_steps; NONE: flat).
double scheduled_lr(double peak, const ScheduleConfig& sched, int64_t step);

// Adam with decoupled weight decay over a fixed parameter list. Parameters
// without a populated gradient are skipped entirely for that step.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg, ScheduleConfig sched = {});

    void step();
    void zero_grad();

    int64_t steps_taken() const { return t_; }
    double last_lr() const { return last_lr_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    ScheduleConfig sched_;
    int64_t t_ = 0;
    double last_lr_ = 0.0;
};

}  // namespace hst
