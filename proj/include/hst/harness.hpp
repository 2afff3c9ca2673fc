#pragma once

#include <string>
#include <vector>

#include "hst/data.hpp"
#include "hst/model.hpp"
#include "hst/optim.hpp"
#include "hst/sar.hpp"

namespace hst {

struct TrainConfig {
    int64_t steps = 1000;      // logical optimization budget
    int64_t batch_size = 32;   // logical batch; halved per pass when SAR runs two passes
    bool double_steps_with_sar = true;  // run 2x steps under SAR to equalize the sample budget
    int64_t eval_interval = 100;
    int64_t eval_batch = 64;
    uint64_t seed = 0;
    double early_stop_accuracy = 0.0;  // stop once dev accuracy reaches this (0 disables)
    AdamConfig adam;
    ScheduleConfig sched;
    bool write_checkpoint = true;
};

// Deterministic epoch-shuffled index stream; train() draws its batches from
// this (seeded with TrainConfig.seed + 1), so an external loop can reproduce
// the exact batch order.
class BatchSampler {
public:
    BatchSampler(int64_t dataset_size, int64_t batch_size, uint64_t seed);
    std::vector<int64_t> next();

private:
    int64_t size_, batch_;
    std::vector<int64_t> order_;
    size_t cursor_ = 0;
    Rng rng_;
};

struct EvalResult {
    double accuracy = 0.0;
    double divergence = 0.0;  // mean bidirectional KL between default and rolled predictions
    int64_t count = 0;
};

// Eval-mode accuracy plus the topology-divergence probe: with roll_tokens=0
// the rolled pass is skipped and divergence is exactly 0.
EvalResult evaluate(const HstModel& model, const Dataset& ds, int64_t roll_tokens,
                    int64_t roll_layer, int64_t batch_size);

struct TrainResult {
    int64_t steps_run = 0;
    double final_loss = 0.0;
    double dev_accuracy = 0.0;
    double dev_divergence = 0.0;
    double test_accuracy = 0.0;
    double test_divergence = 0.0;
};

// Fills n_base (0 -> padded task length) and pins vocab_size/num_classes to
// the task's values; a nonzero n_base that disagrees with the padded length
// is a ConfigError.
HstModelConfig resolve_model_config(HstModelConfig cfg, const SyntheticTaskSpec& task);

// Trains on generated datasets and writes artifacts under out_dir:
// metrics.jsonl (bit-deterministic for a fixed seed), timing.jsonl (wall
// clock, separate so metrics stay reproducible), summary.csv, config.json,
// and checkpoint/. A non-finite loss appends a diagnostic record and throws
// TrainingDiverged. Model init uses seed, batch order seed+1, dropout seed+2.
TrainResult train(const HstModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const SarConfig& sar, const SyntheticTaskSpec& task, const std::string& out_dir);

// train() on caller-supplied splits (the path behind `hst train --data`).
TrainResult train_on(const HstModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const SarConfig& sar, const SyntheticTaskSpec& task, const Dataset& train_ds,
                     const Dataset& dev_ds, const Dataset& test_ds, const std::string& out_dir);

struct SweepResult {
    std::string runs_csv;     // per-seed rows: model,g,seed,accuracy
    std::string summary_csv;  // per-cell rows: model,g,mean_acc,std_acc
};

// Trains {ST, HST} x gs x repeats cells (ST = hierarchy off) and writes the
// two CSVs; rerunning with identical inputs reproduces them byte for byte.
SweepResult bottleneck_sweep(const HstModelConfig& base_model, const TrainConfig& base_train,
                             const SarConfig& sar, const SyntheticTaskSpec& task,
                             const std::vector<int64_t>& gs, int64_t repeats,
                             const std::string& out_dir);

}  // namespace hst
