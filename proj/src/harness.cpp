#include "hst/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "hst/config_io.hpp"
#include "hst/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hst {

namespace {

// Shortest round-trip decimal form, same as the JSON lines use.
std::string fmt(double v) { return json(v).dump(); }

}  // namespace

BatchSampler::BatchSampler(int64_t dataset_size, int64_t batch_size, uint64_t seed)
    : size_(dataset_size), batch_(batch_size), rng_(seed) {
    if (size_ < 1) throw ConfigError("sampler needs a nonempty dataset");
    if (batch_ < 1) throw ConfigError("sampler batch size must be positive");
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<int64_t> BatchSampler::next() {
    std::vector<int64_t> out;
    out.reserve(batch_);
    while (static_cast<int64_t>(out.size()) < batch_) {
        if (cursor_ == order_.size()) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            cursor_ = 0;
        }
        out.push_back(order_[cursor_++]);
    }
    return out;
}

EvalResult evaluate(const HstModel& model, const Dataset& ds, int64_t roll_tokens,
                    int64_t roll_layer, int64_t batch_size) {
    EvalResult out;
    out.count = ds.size();
    if (ds.size() == 0) return out;
    if (batch_size < 1) throw ConfigError("eval batch size must be positive");

    NoGradGuard no_grad;
    int64_t correct = 0;
    double kl_weighted = 0.0;
    for (int64_t start = 0; start < ds.size(); start += batch_size) {
        const int64_t stop = std::min(ds.size(), start + batch_size);
        std::vector<std::vector<int64_t>> rows(ds.rows.begin() + start, ds.rows.begin() + stop);
        std::vector<int64_t> labels(ds.labels.begin() + start, ds.labels.begin() + stop);
        SequenceBatch batch = prepare_batch(rows, labels, model.cfg);

        Tensor probs = model_forward(batch, model, Mode::kEval).probs;
        const int64_t c = probs.dim(1);
        auto v = probs.values();
        for (int64_t b = 0; b < batch.b; ++b) {
            int64_t best = 0;
            for (int64_t k = 1; k < c; ++k)
                if (v[b * c + k] > v[b * c + best]) best = k;
            correct += best == labels[b];
        }
        if (roll_tokens != 0) {
            Tensor rolled =
                model_forward(batch, model, Mode::kEval, nullptr, {roll_tokens, roll_layer}).probs;
            kl_weighted +=
                bidirectional_kl(probs, rolled).item() * static_cast<double>(stop - start);
        }
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    out.divergence = roll_tokens != 0 ? kl_weighted / static_cast<double>(ds.size()) : 0.0;
    return out;
}

HstModelConfig resolve_model_config(HstModelConfig cfg, const SyntheticTaskSpec& task) {
    task.validate();
    const int64_t padded = padded_length(task.length, cfg.g, cfg.w);
    if (cfg.n_base == 0)
        cfg.n_base = padded;
    else if (cfg.n_base != padded)
        throw ConfigError("n_base=" + std::to_string(cfg.n_base) + " but task rows of length " +
                          std::to_string(task.length) + " pad to " + std::to_string(padded));
    cfg.vocab_size = task.vocab_size();
    cfg.num_classes = task.num_classes();
    return cfg;
}

TrainResult train_on(const HstModelConfig& model_cfg, const TrainConfig& train_cfg,
                     const SarConfig& sar, const SyntheticTaskSpec& task, const Dataset& train_ds,
                     const Dataset& dev_ds, const Dataset& test_ds, const std::string& out_dir) {
    const HstModelConfig cfg = resolve_model_config(model_cfg, task);
    if (train_ds.size() == 0) throw ConfigError("training split is empty");
    if (train_cfg.steps < 1) throw ConfigError("steps must be positive");
    if (train_cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (train_cfg.eval_interval < 1) throw ConfigError("eval_interval must be positive");

    fs::create_directories(out_dir);
    HstModel model = HstModel::init(cfg, train_cfg.seed);
    Adam opt(model.parameters(), train_cfg.adam, train_cfg.sched);

    {
        json bundle{{"model", model_config_to_json(model.cfg)},
                    {"train", train_config_to_json(train_cfg)},
                    {"sar", sar_config_to_json(sar)},
                    {"task", task_spec_to_json(task)}};
        std::ofstream cf(fs::path(out_dir) / "config.json", std::ios::trunc);
        if (!cf) throw IoError("cannot write config.json in " + out_dir);
        cf << bundle.dump(2) << '\n';
    }

    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
    std::ofstream timing(fs::path(out_dir) / "timing.jsonl", std::ios::trunc);
    if (!metrics || !timing) throw IoError("cannot open log files in " + out_dir);

    const bool two_pass = sar.enabled;
    const int64_t total =
        train_cfg.steps * (two_pass && train_cfg.double_steps_with_sar ? 2 : 1);
    const int64_t bsz =
        two_pass ? std::max<int64_t>(1, train_cfg.batch_size / 2) : train_cfg.batch_size;
    BatchSampler sampler(train_ds.size(), bsz, train_cfg.seed + 1);
    Rng drop_rng(train_cfg.seed + 2);

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res;
    EvalResult dev;
    double last_loss = 0.0, last_nll = 0.0, last_sar = 0.0;
    int64_t steps_run = 0;
    for (int64_t step = 1; step <= total; ++step) {
        const auto idx = sampler.next();
        std::vector<std::vector<int64_t>> rows;
        std::vector<int64_t> labels;
        rows.reserve(idx.size());
        labels.reserve(idx.size());
        for (int64_t i : idx) {
            rows.push_back(train_ds.rows[i]);
            labels.push_back(train_ds.labels[i]);
        }
        SequenceBatch batch = prepare_batch(rows, labels, cfg);

        Tape::active().reset();
        opt.zero_grad();
        LossBreakdown lb = sar_step(batch, model, sar, Mode::kTrain, &drop_rng);
        last_loss = lb.total.item();
        last_nll = lb.nll;
        last_sar = lb.sar;
        steps_run = step;
        if (!std::isfinite(last_loss)) {
            json diag{{"event", "diverged"}, {"step", step},     {"loss", last_loss},
                      {"nll", lb.nll},       {"sar", lb.sar}};
            metrics << diag.dump() << '\n';
            metrics.flush();
            std::ofstream ef(fs::path(out_dir) / "error.json", std::ios::trunc);
            ef << diag.dump(2) << '\n';
            Tape::active().reset();
            throw TrainingDiverged("loss became non-finite at step " + std::to_string(step));
        }
        opt.step();
        Tape::active().reset();

        if (step % train_cfg.eval_interval == 0 || step == total) {
            dev = evaluate(model, dev_ds, sar.roll_tokens, sar.roll_layer, train_cfg.eval_batch);
            json line{{"step", step},
                      {"lr", opt.last_lr()},
                      {"loss", last_loss},
                      {"nll", last_nll},
                      {"sar", last_sar},
                      {"dev_accuracy", dev.accuracy},
                      {"dev_divergence", dev.divergence}};
            metrics << line.dump() << '\n';
            const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
            timing << json{{"step", step}, {"wall_ms", ms}}.dump() << '\n';
            if (train_cfg.early_stop_accuracy > 0.0 &&
                dev.accuracy >= train_cfg.early_stop_accuracy)
                break;
        }
    }

    res.steps_run = steps_run;
    res.final_loss = last_loss;
    res.dev_accuracy = dev.accuracy;
    res.dev_divergence = dev.divergence;
    EvalResult test =
        evaluate(model, test_ds, sar.roll_tokens, sar.roll_layer, train_cfg.eval_batch);
    res.test_accuracy = test.accuracy;
    res.test_divergence = test.divergence;

    std::ofstream sum(fs::path(out_dir) / "summary.csv", std::ios::trunc);
    sum << "steps,final_loss,dev_accuracy,dev_divergence,test_accuracy,test_divergence\n"
        << res.steps_run << ',' << fmt(res.final_loss) << ',' << fmt(res.dev_accuracy) << ','
        << fmt(res.dev_divergence) << ',' << fmt(res.test_accuracy) << ','
        << fmt(res.test_divergence) << '\n';

    if (train_cfg.write_checkpoint) save_checkpoint(model, (fs::path(out_dir) / "checkpoint").string());
    return res;
}

TrainResult train(const HstModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const SarConfig& sar, const SyntheticTaskSpec& task, const std::string& out_dir) {
    task.validate();
    Dataset train_ds = generate_dataset(task, Split::kTrain);
    Dataset dev_ds = generate_dataset(task, Split::kDev);
    Dataset test_ds = generate_dataset(task, Split::kTest);
    return train_on(model_cfg, train_cfg, sar, task, train_ds, dev_ds, test_ds, out_dir);
}

SweepResult bottleneck_sweep(const HstModelConfig& base_model, const TrainConfig& base_train,
                             const SarConfig& sar, const SyntheticTaskSpec& task,
                             const std::vector<int64_t>& gs, int64_t repeats,
                             const std::string& out_dir) {
    if (gs.empty()) throw ConfigError("sweep needs at least one g value");
    if (repeats < 1) throw ConfigError("sweep repeats must be >= 1");
    std::vector<int64_t> widths = gs;
    std::sort(widths.begin(), widths.end());
    widths.erase(std::unique(widths.begin(), widths.end()), widths.end());

    fs::create_directories(out_dir);
    std::ostringstream runs, summary;
    runs << "model,g,seed,accuracy\n";
    summary << "model,g,mean_acc,std_acc\n";

    for (const std::string kind : {"HST", "ST"}) {
        const bool hierarchical = kind == "HST";
        for (int64_t g : widths) {
            std::vector<double> accs;
            for (int64_t r = 0; r < repeats; ++r) {
                HstModelConfig cell = base_model;
                cell.g = g;
                cell.n_base = 0;  // re-pad for this g
                cell.hierarchical_enabled = hierarchical;
                if (!hierarchical) {
                    cell.weight_sharing = false;
                    cell.hier_init = HierInit::kRandom;
                }
                TrainConfig tc = base_train;
                tc.seed = base_train.seed + static_cast<uint64_t>(r);
                const std::string run_dir = (fs::path(out_dir) /
                                             (std::string(hierarchical ? "hst" : "st") + "_g" +
                                              std::to_string(g) + "_s" + std::to_string(r)))
                                                .string();
                TrainResult res = train(cell, tc, sar, task, run_dir);
                accs.push_back(res.test_accuracy);
                runs << kind << ',' << g << ',' << r << ',' << fmt(res.test_accuracy) << '\n';
            }
            double mean = 0.0;
            for (double a : accs) mean += a;
            mean /= static_cast<double>(accs.size());
            double std_acc = 0.0;
            if (accs.size() > 1) {
                double ss = 0.0;
                for (double a : accs) ss += (a - mean) * (a - mean);
                std_acc = std::sqrt(ss / static_cast<double>(accs.size() - 1));
            }
            summary << kind << ',' << g << ',' << fmt(mean) << ',' << fmt(std_acc) << '\n';
        }
    }

    SweepResult out;
    out.runs_csv = (fs::path(out_dir) / "runs.csv").string();
    out.summary_csv = (fs::path(out_dir) / "summary.csv").string();
    std::ofstream rf(out.runs_csv, std::ios::trunc), sf(out.summary_csv, std::ios::trunc);
    if (!rf || !sf) throw IoError("cannot write sweep CSVs in " + out_dir);
    rf << runs.str();
    sf << summary.str();
    return out;
}

}  // namespace hst
