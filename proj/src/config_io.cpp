#include "hst/config_io.hpp"

#include <unordered_set>

using nlohmann::json;

namespace hst {

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::kMean: return "MEAN";
        case Pooling::kMax: return "MAX";
        case Pooling::kClsGOnly: return "CLS_G_ONLY";
    }
    throw DomainError("unknown pooling mode");
}

std::string to_string(HierInit h) {
    switch (h) {
        case HierInit::kRandom: return "RANDOM";
        case HierInit::kWarmStartCopy: return "WARM_START_COPY";
        case HierInit::kShared: return "SHARED";
    }
    throw DomainError("unknown hier_init mode");
}

Pooling pooling_from_string(const std::string& s) {
    if (s == "MEAN") return Pooling::kMean;
    if (s == "MAX") return Pooling::kMax;
    if (s == "CLS_G_ONLY") return Pooling::kClsGOnly;
    throw SchemaError("pooling must be MEAN, MAX, or CLS_G_ONLY, got '" + s + "'");
}

HierInit hier_init_from_string(const std::string& s) {
    if (s == "RANDOM") return HierInit::kRandom;
    if (s == "WARM_START_COPY") return HierInit::kWarmStartCopy;
    if (s == "SHARED") return HierInit::kShared;
    throw SchemaError("hier_init must be RANDOM, WARM_START_COPY, or SHARED, got '" + s + "'");
}

json model_config_to_json(const HstModelConfig& cfg) {
    return json{{"n_base", cfg.n_base},
                {"g", cfg.g},
                {"w", cfg.w},
                {"d", cfg.d},
                {"layers", cfg.layers},
                {"heads", cfg.heads},
                {"dff", cfg.dff},
                {"vocab_size", cfg.vocab_size},
                {"num_classes", cfg.num_classes},
                {"pooling", to_string(cfg.pooling)},
                {"hierarchical_enabled", cfg.hierarchical_enabled},
                {"weight_sharing", cfg.weight_sharing},
                {"hier_init", to_string(cfg.hier_init)},
                {"scatter_residual", cfg.scatter_residual},
                {"scale_scores", cfg.scale_scores},
                {"attn_dropout", cfg.attn_dropout},
                {"resid_dropout", cfg.resid_dropout},
                {"pad_id", cfg.pad_id},
                {"rep_id", cfg.rep_id}};
}

namespace {

template <class T>
void take(const json& j, const char* key, T& into) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        into = it->get<T>();
    } catch (const json::exception&) {
        throw SchemaError(std::string("model config field '") + key + "' has the wrong type");
    }
}

}  // namespace

std::string to_string(Schedule s) {
    switch (s) {
        case Schedule::kNone: return "NONE";
        case Schedule::kRootSquare: return "ROOT_SQUARE";
        case Schedule::kCosine: return "COSINE";
        case Schedule::kPolynomial: return "POLYNOMIAL";
    }
    throw DomainError("unknown schedule kind");
}

Schedule schedule_from_string(const std::string& s) {
    if (s == "NONE") return Schedule::kNone;
    if (s == "ROOT_SQUARE") return Schedule::kRootSquare;
    if (s == "COSINE") return Schedule::kCosine;
    if (s == "POLYNOMIAL") return Schedule::kPolynomial;
    throw SchemaError("schedule must be NONE, ROOT_SQUARE, COSINE, or POLYNOMIAL, got '" + s +
                      "'");
}

HstModelConfig model_config_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("model config must be a JSON object");
    static const std::unordered_set<std::string> known = {
        "n_base",      "g",           "w",        "d",
        "layers",      "heads",       "dff",      "vocab_size",
        "num_classes", "pooling",     "hierarchical_enabled",
        "weight_sharing", "hier_init", "scatter_residual",
        "scale_scores", "attn_dropout", "resid_dropout", "pad_id", "rep_id"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw SchemaError("unknown model config field '" + it.key() + "'");

    HstModelConfig cfg;
    take(j, "n_base", cfg.n_base);
    take(j, "g", cfg.g);
    take(j, "w", cfg.w);
    take(j, "d", cfg.d);
    take(j, "layers", cfg.layers);
    take(j, "heads", cfg.heads);
    take(j, "dff", cfg.dff);
    take(j, "vocab_size", cfg.vocab_size);
    take(j, "num_classes", cfg.num_classes);
    take(j, "hierarchical_enabled", cfg.hierarchical_enabled);
    take(j, "weight_sharing", cfg.weight_sharing);
    take(j, "scatter_residual", cfg.scatter_residual);
    take(j, "scale_scores", cfg.scale_scores);
    take(j, "attn_dropout", cfg.attn_dropout);
    take(j, "resid_dropout", cfg.resid_dropout);
    take(j, "pad_id", cfg.pad_id);
    take(j, "rep_id", cfg.rep_id);
    if (j.contains("pooling")) cfg.pooling = pooling_from_string(j["pooling"].get<std::string>());
    if (j.contains("hier_init"))
        cfg.hier_init = hier_init_from_string(j["hier_init"].get<std::string>());
    return cfg;
}

namespace {

void check_known(const json& j, const std::unordered_set<std::string>& known, const char* what) {
    if (!j.is_object()) throw SchemaError(std::string(what) + " config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw SchemaError(std::string("unknown ") + what + " config field '" + it.key() + "'");
}

}  // namespace

json sar_config_to_json(const SarConfig& cfg) {
    return json{{"enabled", cfg.enabled},
                {"alpha", cfg.alpha},
                {"roll_tokens", cfg.roll_tokens},
                {"roll_layer", cfg.roll_layer},
                {"dropout_only", cfg.dropout_only}};
}

SarConfig sar_config_from_json(const json& j) {
    static const std::unordered_set<std::string> known = {"enabled", "alpha", "roll_tokens",
                                                          "roll_layer", "dropout_only"};
    check_known(j, known, "sar");
    SarConfig cfg;
    take(j, "enabled", cfg.enabled);
    take(j, "alpha", cfg.alpha);
    take(j, "roll_tokens", cfg.roll_tokens);
    take(j, "roll_layer", cfg.roll_layer);
    take(j, "dropout_only", cfg.dropout_only);
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    return json{{"steps", cfg.steps},
                {"batch_size", cfg.batch_size},
                {"double_steps_with_sar", cfg.double_steps_with_sar},
                {"eval_interval", cfg.eval_interval},
                {"eval_batch", cfg.eval_batch},
                {"seed", cfg.seed},
                {"early_stop_accuracy", cfg.early_stop_accuracy},
                {"lr", cfg.adam.lr},
                {"beta1", cfg.adam.beta1},
                {"beta2", cfg.adam.beta2},
                {"eps", cfg.adam.eps},
                {"weight_decay", cfg.adam.weight_decay},
                {"schedule", to_string(cfg.sched.kind)},
                {"warmup", cfg.sched.warmup},
                {"total_steps", cfg.sched.total_steps},
                {"write_checkpoint", cfg.write_checkpoint}};
}

TrainConfig train_config_from_json(const json& j) {
    static const std::unordered_set<std::string> known = {
        "steps",      "batch_size", "double_steps_with_sar",
        "eval_interval", "eval_batch", "seed",
        "early_stop_accuracy", "lr", "beta1",
        "beta2",      "eps",        "weight_decay",
        "schedule",   "warmup",     "total_steps",
        "write_checkpoint"};
    check_known(j, known, "train");
    TrainConfig cfg;
    take(j, "steps", cfg.steps);
    take(j, "batch_size", cfg.batch_size);
    take(j, "double_steps_with_sar", cfg.double_steps_with_sar);
    take(j, "eval_interval", cfg.eval_interval);
    take(j, "eval_batch", cfg.eval_batch);
    take(j, "seed", cfg.seed);
    take(j, "early_stop_accuracy", cfg.early_stop_accuracy);
    take(j, "lr", cfg.adam.lr);
    take(j, "beta1", cfg.adam.beta1);
    take(j, "beta2", cfg.adam.beta2);
    take(j, "eps", cfg.adam.eps);
    take(j, "weight_decay", cfg.adam.weight_decay);
    take(j, "warmup", cfg.sched.warmup);
    take(j, "total_steps", cfg.sched.total_steps);
    take(j, "write_checkpoint", cfg.write_checkpoint);
    if (j.contains("schedule"))
        cfg.sched.kind = schedule_from_string(j["schedule"].get<std::string>());
    return cfg;
}

json task_spec_to_json(const SyntheticTaskSpec& spec) {
    return json{{"task", to_string(spec.task)},
                {"length", spec.length},
                {"block_width", spec.block_width},
                {"max_depth", spec.max_depth},
                {"seed", spec.seed},
                {"train_size", spec.train_size},
                {"dev_size", spec.dev_size},
                {"test_size", spec.test_size}};
}

SyntheticTaskSpec task_spec_from_json(const json& j) {
    static const std::unordered_set<std::string> known = {
        "task",      "length",   "block_width", "max_depth",
        "seed",      "train_size", "dev_size",  "test_size"};
    check_known(j, known, "task");
    SyntheticTaskSpec spec;
    take(j, "length", spec.length);
    take(j, "block_width", spec.block_width);
    take(j, "max_depth", spec.max_depth);
    take(j, "seed", spec.seed);
    take(j, "train_size", spec.train_size);
    take(j, "dev_size", spec.dev_size);
    take(j, "test_size", spec.test_size);
    if (j.contains("task")) spec.task = task_kind_from_string(j["task"].get<std::string>());
    return spec;
}

}  // namespace hst
