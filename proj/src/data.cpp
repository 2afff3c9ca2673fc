#include "hst/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <fstream>

#include "json.hpp"

#include "hst/error.hpp"

using nlohmann::json;

namespace hst {

namespace {

constexpr int64_t kPad = 0;
// parity vocab
constexpr int64_t kMarkA = 2, kMarkB = 3, kFiller = 4;
// listops vocab: digit v -> 2+v, ops and the closer after them
constexpr int64_t kDigitBase = 2;
constexpr int64_t kOpMin = 12, kOpMax = 13, kOpMed = 14, kOpSm = 15, kClose = 16;

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::kCrossBlockParity: return "CROSS_BLOCK_PARITY";
        case TaskKind::kListopsMini: return "LISTOPS_MINI";
    }
    throw DomainError("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "CROSS_BLOCK_PARITY") return TaskKind::kCrossBlockParity;
    if (s == "LISTOPS_MINI") return TaskKind::kListopsMini;
    throw SchemaError("task must be CROSS_BLOCK_PARITY or LISTOPS_MINI, got '" + s + "'");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kDev: return "dev";
        case Split::kTest: return "test";
    }
    throw DomainError("unknown split");
}

int64_t SyntheticTaskSpec::vocab_size() const {
    return task == TaskKind::kCrossBlockParity ? 5 : 17;
}

int64_t SyntheticTaskSpec::num_classes() const {
    return task == TaskKind::kCrossBlockParity ? 2 : 10;
}

void SyntheticTaskSpec::validate() const {
    if (length < 1) throw ConfigError("task length must be positive");
    if (train_size < 0 || dev_size < 0 || test_size < 0)
        throw ConfigError("split sizes must be nonnegative");
    if (task == TaskKind::kCrossBlockParity) {
        if (block_width < 1) throw ConfigError("block_width must be positive");
        if (length % block_width != 0)
            throw ConfigError("parity length " + std::to_string(length) +
                              " must be a multiple of block_width " + std::to_string(block_width));
    } else {
        if (max_depth < 1) throw ConfigError("max_depth must be positive");
        if (length < 4) throw ConfigError("listops rows need at least 4 tokens");
    }
}

// ---------------------------------------------------------------------------
// Cross-block parity: one mark from {A,B} per block at a random offset,
// filler everywhere else; the label is the parity of the number of A marks.

namespace {

void gen_parity_row(const SyntheticTaskSpec& spec, Rng& rng, std::vector<int64_t>& row,
                    int64_t& label) {
    row.assign(spec.length, kFiller);
    const int64_t blocks = spec.length / spec.block_width;
    std::uniform_int_distribution<int64_t> off(0, spec.block_width - 1);
    std::uniform_int_distribution<int> coin(0, 1);
    int64_t a_count = 0;
    for (int64_t b = 0; b < blocks; ++b) {
        const bool is_a = coin(rng) == 0;
        a_count += is_a;
        row[b * spec.block_width + off(rng)] = is_a ? kMarkA : kMarkB;
    }
    label = a_count % 2;
}

// ---------------------------------------------------------------------------
// ListOps-mini: nested prefix expressions over MIN/MAX/MED/SM and digits.

struct ListopsNode {
    int64_t op = -1;  // -1 = leaf
    int64_t value = 0;
    std::vector<ListopsNode> args;
};

int64_t tree_tokens(const ListopsNode& n) {
    if (n.op < 0) return 1;
    int64_t total = 2;  // opener and closer
    for (const auto& a : n.args) total += tree_tokens(a);
    return total;
}

ListopsNode gen_tree(Rng& rng, int64_t depth, int64_t max_depth) {
    std::uniform_int_distribution<int64_t> digit(0, 9);
    ListopsNode node;
    const bool leaf =
        depth > 1 && (depth > max_depth || std::uniform_real_distribution<>(0, 1)(rng) < 0.45);
    if (leaf) {
        node.value = digit(rng);
        return node;
    }
    node.op = kOpMin + std::uniform_int_distribution<int64_t>(0, 3)(rng);
    const int64_t arity = std::uniform_int_distribution<int64_t>(2, 3)(rng);
    for (int64_t i = 0; i < arity; ++i) node.args.push_back(gen_tree(rng, depth + 1, max_depth));
    return node;
}

int64_t eval_tree(const ListopsNode& n) {
    if (n.op < 0) return n.value;
    std::vector<int64_t> vals;
    vals.reserve(n.args.size());
    for (const auto& a : n.args) vals.push_back(eval_tree(a));
    switch (n.op) {
        case kOpMin: return *std::min_element(vals.begin(), vals.end());
        case kOpMax: return *std::max_element(vals.begin(), vals.end());
        case kOpMed: {
            std::sort(vals.begin(), vals.end());
            const size_t k = vals.size();
            if (k % 2 == 1) return vals[k / 2];
            return (vals[k / 2 - 1] + vals[k / 2]) / 2;  // floor of the two-middle mean
        }
        case kOpSm: {
            int64_t s = 0;
            for (int64_t v : vals) s += v;
            return s % 10;
        }
        default: throw DomainError("unknown listops op");
    }
}

void emit_tokens(const ListopsNode& n, std::vector<int64_t>& out) {
    if (n.op < 0) {
        out.push_back(kDigitBase + n.value);
        return;
    }
    out.push_back(n.op);
    for (const auto& a : n.args) emit_tokens(a, out);
    out.push_back(kClose);
}

void gen_listops_row(const SyntheticTaskSpec& spec, Rng& rng, std::vector<int64_t>& row,
                     int64_t& label) {
    for (int attempt = 0; attempt < 256; ++attempt) {
        ListopsNode tree = gen_tree(rng, 1, spec.max_depth);
        if (tree_tokens(tree) > spec.length) continue;
        row.clear();
        emit_tokens(tree, row);
        row.resize(spec.length, kPad);
        label = eval_tree(tree);
        return;
    }
    // With depth<=4 and arity<=3 the worst case is 161 tokens, so any sane
    // length passes within a few draws; reaching here means the budget is
    // impossible rather than unlucky.
    throw ConfigError("cannot fit a depth-" + std::to_string(spec.max_depth) +
                      " expression into " + std::to_string(spec.length) + " tokens");
}

}  // namespace

Dataset generate_dataset(const SyntheticTaskSpec& spec, Split split) {
    spec.validate();
    int64_t count = 0;
    switch (split) {
        case Split::kTrain: count = spec.train_size; break;
        case Split::kDev: count = spec.dev_size; break;
        case Split::kTest: count = spec.test_size; break;
    }
    Rng rng(splitmix64(spec.seed ^ (static_cast<uint64_t>(split) + 1) * 0xA24BAED4963EE407ull));
    Dataset ds;
    ds.rows.resize(count);
    ds.labels.resize(count);
    for (int64_t i = 0; i < count; ++i) {
        if (spec.task == TaskKind::kCrossBlockParity)
            gen_parity_row(spec, rng, ds.rows[i], ds.labels[i]);
        else
            gen_listops_row(spec, rng, ds.rows[i], ds.labels[i]);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// ListOps text helpers

std::vector<int64_t> tokenize_listops(const std::string& expr) {
    std::vector<int64_t> out;
    size_t i = 0;
    while (i < expr.size()) {
        const char c = expr[i];
        if (c == ' ' || c == '\t' || c == '\n') {
            ++i;
        } else if (c == ']') {  // self-delimiting, "9]" lexes as 9 then ]
            out.push_back(kClose);
            ++i;
        } else if (c == '[') {
            size_t j = i + 1;
            while (j < expr.size() && std::isalpha(static_cast<unsigned char>(expr[j]))) ++j;
            const std::string op = expr.substr(i, j - i);
            if (op == "[MIN") out.push_back(kOpMin);
            else if (op == "[MAX") out.push_back(kOpMax);
            else if (op == "[MED") out.push_back(kOpMed);
            else if (op == "[SM") out.push_back(kOpSm);
            else throw ParseError("unknown listops operator '" + op + "'");
            i = j;
        } else if (c >= '0' && c <= '9') {
            if (i + 1 < expr.size() && expr[i + 1] >= '0' && expr[i + 1] <= '9')
                throw ParseError("listops literals are single digits, got '" +
                                 expr.substr(i, 2) + "...'");
            out.push_back(kDigitBase + (c - '0'));
            ++i;
        } else {
            throw ParseError(std::string("unknown listops token '") + c + "'");
        }
    }
    return out;
}

namespace {

int64_t eval_at(const std::vector<int64_t>& t, size_t& pos) {
    if (pos >= t.size()) throw ParseError("listops expression ends unexpectedly");
    const int64_t tok = t[pos];
    if (tok >= kDigitBase && tok < kDigitBase + 10) {
        ++pos;
        return tok - kDigitBase;
    }
    if (tok < kOpMin || tok > kOpSm)
        throw ParseError("expected digit or operator at token " + std::to_string(pos));
    ++pos;
    ListopsNode node;
    node.op = tok;
    std::vector<int64_t> vals;
    while (true) {
        if (pos >= t.size()) throw ParseError("missing ] in listops expression");
        if (t[pos] == kClose) {
            ++pos;
            break;
        }
        vals.push_back(eval_at(t, pos));
    }
    if (vals.empty()) throw ParseError("listops operator with no arguments");
    for (int64_t v : vals) {
        ListopsNode leaf;
        leaf.value = v;
        node.args.push_back(leaf);
    }
    return eval_tree(node);
}

}  // namespace

int64_t eval_listops(const std::vector<int64_t>& tokens) {
    // strip trailing padding so stored rows evaluate as-is
    size_t end = tokens.size();
    while (end > 0 && tokens[end - 1] == kPad) --end;
    std::vector<int64_t> t(tokens.begin(), tokens.begin() + end);
    size_t pos = 0;
    const int64_t v = eval_at(t, pos);
    if (pos != t.size()) throw ParseError("trailing tokens after listops expression");
    return v;
}

// ---------------------------------------------------------------------------
// Binary records + JSON sidecar

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian u32 records");

void save_dataset(const Dataset& ds, const SyntheticTaskSpec& spec, Split split,
                  const std::string& prefix) {
    if (ds.rows.size() != ds.labels.size())
        throw ShapeError("dataset rows and labels disagree in length");
    std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot open " + prefix + ".bin for writing");
    auto put_u32 = [&bin](uint32_t v) { bin.write(reinterpret_cast<const char*>(&v), 4); };
    for (size_t i = 0; i < ds.rows.size(); ++i) {
        put_u32(static_cast<uint32_t>(ds.rows[i].size()));
        put_u32(static_cast<uint32_t>(ds.labels[i]));
        for (int64_t id : ds.rows[i]) put_u32(static_cast<uint32_t>(id));
    }
    if (!bin) throw IoError("short write to " + prefix + ".bin");
    bin.close();

    json side{{"format", "hst-dataset-v1"},
              {"task", to_string(spec.task)},
              {"split", to_string(split)},
              {"count", ds.size()},
              {"length", spec.length},
              {"block_width", spec.block_width},
              {"max_depth", spec.max_depth},
              {"seed", spec.seed},
              {"train_size", spec.train_size},
              {"dev_size", spec.dev_size},
              {"test_size", spec.test_size},
              {"vocab_size", spec.vocab_size()},
              {"num_classes", spec.num_classes()}};
    std::ofstream js(prefix + ".json", std::ios::trunc);
    if (!js) throw IoError("cannot open " + prefix + ".json for writing");
    js << side.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::string& prefix) {
    std::ifstream js(prefix + ".json");
    if (!js) throw IoError("cannot open " + prefix + ".json");
    json side;
    try {
        side = json::parse(js);
    } catch (const json::exception& e) {
        throw ParseError(prefix + ".json: " + e.what());
    }
    if (side.value("format", "") != "hst-dataset-v1")
        throw SchemaError(prefix + ".json: unrecognized dataset format");

    LoadedDataset out;
    try {
        out.spec.task = task_kind_from_string(side.at("task").get<std::string>());
        out.spec.length = side.at("length").get<int64_t>();
        out.spec.block_width = side.at("block_width").get<int64_t>();
        out.spec.max_depth = side.at("max_depth").get<int64_t>();
        out.spec.seed = side.at("seed").get<uint64_t>();
        out.spec.train_size = side.value("train_size", int64_t{0});
        out.spec.dev_size = side.value("dev_size", int64_t{0});
        out.spec.test_size = side.value("test_size", int64_t{0});
        const std::string split = side.at("split").get<std::string>();
        if (split == "train") out.split = Split::kTrain;
        else if (split == "dev") out.split = Split::kDev;
        else if (split == "test") out.split = Split::kTest;
        else throw SchemaError(prefix + ".json: unknown split '" + split + "'");
    } catch (const json::exception& e) {
        throw SchemaError(prefix + ".json: " + std::string(e.what()));
    }
    const auto count = side.value("count", int64_t{-1});
    if (count < 0) throw SchemaError(prefix + ".json: missing count");

    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + prefix + ".bin");
    auto get_u32 = [&bin, &prefix]() {
        uint32_t v = 0;
        bin.read(reinterpret_cast<char*>(&v), 4);
        if (!bin) throw IoError(prefix + ".bin: truncated record");
        return v;
    };
    const int64_t vocab = out.spec.vocab_size();
    const int64_t classes = out.spec.num_classes();
    for (int64_t i = 0; i < count; ++i) {
        const uint32_t len = get_u32();
        if (static_cast<int64_t>(len) != out.spec.length)
            throw SchemaError(prefix + ".bin: record " + std::to_string(i) + " has length " +
                              std::to_string(len) + ", sidecar says " +
                              std::to_string(out.spec.length));
        const uint32_t label = get_u32();
        if (static_cast<int64_t>(label) >= classes)
            throw SchemaError(prefix + ".bin: record " + std::to_string(i) + " label " +
                              std::to_string(label) + " out of range");
        std::vector<int64_t> row(len);
        for (uint32_t k = 0; k < len; ++k) {
            row[k] = get_u32();
            if (row[k] >= vocab)
                throw SchemaError(prefix + ".bin: record " + std::to_string(i) + " token " +
                                  std::to_string(row[k]) + " outside vocab");
        }
        out.data.rows.push_back(std::move(row));
        out.data.labels.push_back(label);
    }
    bin.peek();
    if (!bin.eof()) throw SchemaError(prefix + ".bin: trailing bytes after " +
                                      std::to_string(count) + " records");
    return out;
}

}  // namespace hst
