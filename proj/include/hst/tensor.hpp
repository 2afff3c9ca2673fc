#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hst/error.hpp"

namespace hst {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first backward touches it
    bool requires_grad = false;
};

}  // namespace detail

// Dense f64 tensor. Handle semantics: copying a Tensor aliases the same
// storage, which is also how parameter weight-sharing is expressed (two
// handles onto one impl accumulate gradient into one buffer).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }
    // Negative axes count from the back.
    int64_t dim(int64_t axis) const;

    std::span<const double> values() const { return impl_->values; }
    std::span<double> values_mut() { return impl_->values; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v);

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    void zero_grad();

    // Detached deep copy.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    detail::TensorImpl* impl() const { return impl_.get(); }
    std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
    friend Tensor make_tensor(Shape, std::vector<double>, bool);
};

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad);

// Boolean mask with numpy-style broadcast against the tensor it gates.
struct Mask {
    Shape shape;
    std::vector<uint8_t> data;

    bool defined() const { return !data.empty(); }
    static Mask full_true(Shape shape);
};

// ---------------------------------------------------------------------------
// Tape

// During backward, per-tensor running gradients live here before being folded
// into each requires_grad tensor's grad buffer.
class GradSink {
public:
    std::vector<double>& buffer_for(detail::TensorImpl* t);
    std::vector<double>* find(detail::TensorImpl* t);

private:
    friend class Tape;
    std::unordered_map<detail::TensorImpl*, std::vector<double>> buffers_;
};

struct TapeEntry {
    std::shared_ptr<detail::TensorImpl> out;
    // Receives d(loss)/d(out) and adds each input's contribution into the sink.
    std::function<void(const std::vector<double>& dout, GradSink& sink)> backward;
};

// Append-only record of the forward pass; replaying it in reverse populates
// grad for every requires_grad tensor reachable from the loss. Never share an
// instance across threads.
class Tape {
public:
    void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
    void backward(const Tensor& loss);
    void reset() { entries_.clear(); }
    size_t size() const { return entries_.size(); }

    static Tape& active();  // thread-local default tape

private:
    std::vector<TapeEntry> entries_;
};

bool grad_enabled();

// RAII scope that suppresses tape recording.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Primitive ops. Each records its backward closure on the active tape when
// gradients are enabled and any input requires them.

Tensor add(const Tensor& a, const Tensor& b);       // broadcasting
Tensor sub(const Tensor& a, const Tensor& b);       // broadcasting
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise, broadcasting
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);    // [...,p,q] @ [...,q,r]
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int64_t>& axes);
Tensor transpose_last2(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);                        // -> rank-0 scalar
Tensor sum_rows(const Tensor& x);                   // reduce axis -2
Tensor mean_rows(const Tensor& x);                  // reduce axis -2
// Max over axis -2; rows with row_mask==0 are ignored (mask shape = x.shape
// minus the last axis). Gradient routes to each argmax entry.
Tensor max_rows(const Tensor& x, const Mask* row_mask = nullptr);

// Row softmax over the last axis. Masked-out entries are exact zeros in the
// output; a fully masked row is a DomainError. Stabilized by per-row max
// subtraction after the additive -1e9 mask surrogate.
Tensor softmax_rows(const Tensor& x, const Mask* mask = nullptr);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Inverted dropout: keeps entries with prob 1-p and rescales by 1/(1-p).
// Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// ids indexes table rows; output shape = ids_shape + [d].
Tensor embed(const std::vector<int64_t>& ids, const Shape& ids_shape, const Tensor& table);

// Gather/scatter whole rows along axis -2, batched over leading axes.
// scatter_rows REPLACES the addressed rows (indices must be distinct).
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& indices);
Tensor scatter_rows(const Tensor& x, const std::vector<int64_t>& indices, const Tensor& rows);

// Mean over the batch of -log softmax(logits)[label]; stable log-sum-exp.
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

// Populates grads of every requires_grad tensor reachable from `loss` on the
// active tape. Grads accumulate across calls until zero_grad/reset.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Non-taped helpers

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
Tensor xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng, bool requires_grad = false);
bool all_finite(const Tensor& x);

// Raises glibc's malloc trim/mmap thresholds so the graph's short-lived
// buffers recycle in user space instead of through page-level syscalls
// (training otherwise spends ~40% of wall time in the kernel). Process-wide;
// call once from an entry point. No-op on other libcs.
void tune_allocator();

}  // namespace hst
