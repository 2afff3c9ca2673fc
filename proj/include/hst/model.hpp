#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hst/attention.hpp"
#include "hst/tensor.hpp"
#include "hst/topology.hpp"

namespace hst {

enum class Pooling { kMean, kMax, kClsGOnly };
enum class HierInit { kRandom, kWarmStartCopy, kShared };

struct HstModelConfig {
    int64_t n_base = 0;  // sequence length fed to the model, after divisibility padding
    int64_t g = 0;
    int64_t w = 1;
    int64_t d = 32;
    int64_t layers = 2;
    int64_t heads = 2;
    int64_t dff = 0;  // 0 -> 4*d
    int64_t vocab_size = 0;
    int64_t num_classes = 2;
    Pooling pooling = Pooling::kMean;
    bool hierarchical_enabled = true;  // false = plain sparse transformer (no reps inserted)
    bool weight_sharing = false;       // alias hierarchical projections onto the sparse ones
    HierInit hier_init = HierInit::kRandom;
    bool scatter_residual = false;  // add R to the rep rows instead of replacing them
    bool scale_scores = true;
    double attn_dropout = 0.0;
    double resid_dropout = 0.0;
    int64_t pad_id = 0;
    int64_t rep_id = 1;

    int64_t mlp_hidden() const { return dff > 0 ? dff : 4 * d; }
    // weight_sharing and hier_init=SHARED imply each other.
    HstModelConfig normalized() const;
    void validate() const;  // ConfigError on inconsistent fields
};

// Fixed-length batch with representative tokens already inserted. `real`
// marks positions carrying information: non-PAD tokens, and representatives
// whose block holds at least one real token.
struct SequenceBatch {
    int64_t b = 0;
    int64_t n = 0;
    std::vector<int64_t> ids;     // b*n
    std::vector<int64_t> labels;  // b
    std::vector<uint8_t> real;    // b*n

    bool all_real() const;
};

// Places rep_id at the start of each w-wide block after the g global tokens.
// Returns the augmented ids and the rep positions (i*(w+1)+g for block i).
std::pair<std::vector<int64_t>, std::vector<int64_t>> insert_representatives(
    const std::vector<int64_t>& ids, int64_t g, int64_t w, int64_t rep_id);

// Pads rows to cfg.n_base with pad_id and inserts representatives when the
// model is hierarchical. Rows must share one length <= cfg.n_base.
SequenceBatch prepare_batch(const std::vector<std::vector<int64_t>>& rows,
                            const std::vector<int64_t>& labels, const HstModelConfig& cfg);

// Body length after padding (t - g) up to the next multiple of w.
int64_t padded_length(int64_t t, int64_t g, int64_t w);

struct HstModel {
    HstModelConfig cfg;  // normalized
    SparseTopology topo;
    Tensor tok_embed;  // [vocab,d]
    Tensor pos_embed;  // [topo.n,d]
    std::vector<BlockParams> blocks;
    std::vector<AttentionParams> hier;  // one per layer when hierarchical, else empty
    Tensor w_out;                       // [d,num_classes]

    static HstModel init(const HstModelConfig& cfg, uint64_t seed);
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    // Element count over distinct storages (shared weights counted once).
    int64_t distinct_parameter_elements() const;
};

// One layer: sparse pre-norm block, then (when hier != nullptr and the
// topology carries reps) bare dense attention over the gathered rep rows,
// scattered back in place of them.
Tensor hst_layer_forward(const Tensor& h, const BlockParams& block, const AttentionParams* hier,
                         const SparseTopology& topo, const SparseTopology* hier_topo,
                         const HstModelConfig& cfg, Mode mode, Rng* rng,
                         const Mask* extra_mask = nullptr, const Mask* hier_extra_mask = nullptr);

// MEAN or MAX over the row axis of [m,d] or [b,m,d]. CLS_G_ONLY is handled by
// the model (it reads a hidden state, not the rep matrix).
Tensor pool_representatives(const Tensor& reps, Pooling mode);

// Softmax(pooled @ w_out): [b,d] -> [b,c] probabilities.
Tensor classify(const Tensor& pooled, const Tensor& w_out);

// Cyclic input shift applied to the input of a given layer (0 = right after
// the embedding sum).
struct RollSpec {
    int64_t k = 0;
    int64_t layer = 0;
};

struct ForwardOutput {
    Tensor logits;  // [b,c]
    Tensor probs;   // [b,c]
};

ForwardOutput model_forward(const SequenceBatch& batch, const HstModel& model, Mode mode,
                            Rng* rng = nullptr, const RollSpec& roll = {});

// Checkpoint directory: manifest.json (config + parameter table) plus one
// little-endian float64 flat file per distinct parameter; shared parameters
// are recorded as aliases.
void save_checkpoint(const HstModel& model, const std::string& dir);
HstModel load_checkpoint(const std::string& dir);

}  // namespace hst
