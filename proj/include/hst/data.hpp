#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hst/tensor.hpp"

namespace hst {

// Token-id conventions shared by both tasks: 0 is PAD, 1 is the reserved
// representative ([CLS]) id. Parity then uses {A=2, B=3, FILLER=4}; ListOps
// uses digits 0-9 -> 2..11, then [MIN,[MAX,[MED,[SM,] -> 12..16.
enum class TaskKind { kCrossBlockParity, kListopsMini };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct SyntheticTaskSpec {
    TaskKind task = TaskKind::kCrossBlockParity;
    int64_t length = 64;      // every row is exactly this many tokens (PAD-filled)
    int64_t block_width = 8;  // parity: width of the mark blocks tiling the row
    int64_t max_depth = 4;    // listops: nesting budget
    uint64_t seed = 0;
    int64_t train_size = 0;
    int64_t dev_size = 0;
    int64_t test_size = 0;

    int64_t vocab_size() const;   // parity 5, listops 17
    int64_t num_classes() const;  // parity 2, listops 10
    void validate() const;
};

struct Dataset {
    std::vector<std::vector<int64_t>> rows;
    std::vector<int64_t> labels;

    int64_t size() const { return static_cast<int64_t>(rows.size()); }
};

enum class Split { kTrain, kDev, kTest };
std::string to_string(Split s);

// Pure function of (spec, split): the same arguments always reproduce the
// same examples, each split drawing from its own derived stream.
Dataset generate_dataset(const SyntheticTaskSpec& spec, Split split);

// --------------------------------------------------------------------------
// ListOps helpers, exposed so tests can drive the evaluator directly.

// "[MIN [MAX 2 3] 4]" -> token ids; ParseError on unknown tokens.
std::vector<int64_t> tokenize_listops(const std::string& expr);

// Evaluates a tokenized expression; ParseError on malformed input.
int64_t eval_listops(const std::vector<int64_t>& tokens);

// --------------------------------------------------------------------------
// On-disk form: <prefix>.bin holds length-prefixed records (u32 token count,
// u32 label, then that many u32 ids, all little-endian); <prefix>.json is the
// sidecar schema used to validate the binary on load.

void save_dataset(const Dataset& ds, const SyntheticTaskSpec& spec, Split split,
                  const std::string& prefix);

struct LoadedDataset {
    Dataset data;
    SyntheticTaskSpec spec;
    Split split = Split::kTrain;
};

LoadedDataset load_dataset(const std::string& prefix);

}  // namespace hst
