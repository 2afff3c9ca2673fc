#include "hst/tensor.hpp"

#include <Eigen/Dense>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace hst {

namespace {

using ERM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const ERM>;
using MMap = Eigen::Map<ERM>;

thread_local bool g_grad_enabled = true;

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

bool wants_grad(std::initializer_list<const Tensor*> ins) {
    if (!g_grad_enabled) return false;
    for (auto* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

void record_op(Tensor& out, std::function<void(const std::vector<double>&, GradSink&)> bw) {
    out.set_requires_grad(true);
    Tape::active().record({out.impl_ptr(), std::move(bw)});
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const int64_t ra = static_cast<int64_t>(a.size());
    const int64_t rb = static_cast<int64_t>(b.size());
    const int64_t r = std::max(ra, rb);
    Shape out(r);
    for (int64_t i = 0; i < r; ++i) {
        const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides of `in` aligned to `out`'s rank; broadcast axes get stride 0.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t s = 1;
    int64_t o = static_cast<int64_t>(out.size()) - 1;
    for (int64_t i = static_cast<int64_t>(in.size()) - 1; i >= 0; --i, --o) {
        strides[o] = (in[i] == 1 && out[o] != 1) ? 0 : s;
        s *= in[i];
    }
    return strides;
}

// Calls f(out_flat, a_offset, b_offset) for every element of out_shape, with
// a/b offsets following broadcast semantics.
template <class F>
void for_each_broadcast(const Shape& out_shape, const Shape& as, const Shape& bs, F&& f) {
    const auto sa = broadcast_strides(as, out_shape);
    const auto sb = broadcast_strides(bs, out_shape);
    const int64_t r = static_cast<int64_t>(out_shape.size());
    const int64_t n = shape_numel(out_shape);
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t k = 0; k < n; ++k) {
        f(k, oa, ob);
        for (int64_t d = r - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out_shape[d]) break;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

template <class F>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F&& f) {
    check_defined(a, name);
    check_defined(b, name);
    Shape os = broadcast_shapes(a.shape(), b.shape());
    std::vector<double> out(shape_numel(os));
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    if (a.shape() == b.shape()) {
        for (int64_t k = 0; k < a.numel(); ++k) out[k] = f(pa[k], pb[k]);
    } else {
        for_each_broadcast(os, a.shape(), b.shape(),
                           [&](int64_t k, int64_t oa, int64_t ob) { out[k] = f(pa[oa], pb[ob]); });
    }
    return make_tensor(std::move(os), std::move(out), false);
}

void validate_shape(const Shape& s, const char* op) {
    for (int64_t d : s)
        if (d < 0) throw ShapeError(std::string(op) + ": negative dimension in " + shape_str(s));
}

std::vector<uint8_t> expand_mask(const Mask& m, const Shape& target) {
    if (m.data.size() != static_cast<size_t>(shape_numel(m.shape)))
        throw ShapeError("mask data size does not match mask shape " + shape_str(m.shape));
    if (broadcast_shapes(m.shape, target) != target)
        throw ShapeError("mask shape " + shape_str(m.shape) + " does not broadcast to " +
                         shape_str(target));
    std::vector<uint8_t> out(shape_numel(target));
    for_each_broadcast(target, m.shape, Shape{},
                       [&](int64_t k, int64_t oa, int64_t) { out[k] = m.data[oa]; });
    return out;
}

}  // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape, "zeros");
    std::vector<double> v(shape_numel(shape), 0.0);
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    validate_shape(shape, "full");
    std::vector<double> v(shape_numel(shape), value);
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape, "from");
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
        throw ShapeError("from: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(shape));
    return make_tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return make_tensor({}, {value}, requires_grad);
}

int64_t Tensor::dim(int64_t axis) const {
    const int64_t r = ndim();
    const int64_t a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
    return impl_->shape[a];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return impl_->values[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

std::span<const double> Tensor::grad() const {
    if (impl_->grad.empty())
        throw ContractError("grad: not populated; run backward first");
    return impl_->grad;
}

std::span<double> Tensor::grad_mut() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
    return make_tensor(impl_->shape, impl_->values, false);
}

Mask Mask::full_true(Shape shape) {
    Mask m;
    m.data.assign(shape_numel(shape), 1);
    m.shape = std::move(shape);
    return m;
}

// ---------------------------------------------------------------------------
// Tape

std::vector<double>& GradSink::buffer_for(detail::TensorImpl* t) {
    auto it = buffers_.find(t);
    if (it == buffers_.end())
        it = buffers_.emplace(t, std::vector<double>(t->values.size(), 0.0)).first;
    return it->second;
}

std::vector<double>* GradSink::find(detail::TensorImpl* t) {
    auto it = buffers_.find(t);
    return it == buffers_.end() ? nullptr : &it->second;
}

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined loss");
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    GradSink sink;
    sink.buffer_for(loss.impl())[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        const std::vector<double>* dout = sink.find(it->out.get());
        if (dout) it->backward(*dout, sink);
    }
    for (auto& [impl, buf] : sink.buffers_) {
        if (!impl->requires_grad) continue;
        if (impl->grad.empty()) impl->grad.assign(impl->values.size(), 0.0);
        for (size_t k = 0; k < buf.size(); ++k) impl->grad[k] += buf[k];
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) { Tape::active().backward(loss); }

// ---------------------------------------------------------------------------
// Elementwise / broadcast ops

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor y = binary_op(a, b, "add", [](double x, double z) { return x + z; });
    if (wants_grad({&a, &b})) {
        auto ai = a.impl_ptr(), bi = b.impl_ptr();
        Shape os = y.shape();
        record_op(y, [ai, bi, os](const std::vector<double>& dout, GradSink& sink) {
            if (ai->requires_grad) {
                auto& da = sink.buffer_for(ai.get());
                for_each_broadcast(os, ai->shape, bi->shape,
                                   [&](int64_t k, int64_t oa, int64_t) { da[oa] += dout[k]; });
            }
            if (bi->requires_grad) {
                auto& db = sink.buffer_for(bi.get());
                for_each_broadcast(os, ai->shape, bi->shape,
                                   [&](int64_t k, int64_t, int64_t ob) { db[ob] += dout[k]; });
            }
        });
    }
    return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor y = binary_op(a, b, "sub", [](double x, double z) { return x - z; });
    if (wants_grad({&a, &b})) {
        auto ai = a.impl_ptr(), bi = b.impl_ptr();
        Shape os = y.shape();
        record_op(y, [ai, bi, os](const std::vector<double>& dout, GradSink& sink) {
            if (ai->requires_grad) {
                auto& da = sink.buffer_for(ai.get());
                for_each_broadcast(os, ai->shape, bi->shape,
                                   [&](int64_t k, int64_t oa, int64_t) { da[oa] += dout[k]; });
            }
            if (bi->requires_grad) {
                auto& db = sink.buffer_for(bi.get());
                for_each_broadcast(os, ai->shape, bi->shape,
                                   [&](int64_t k, int64_t, int64_t ob) { db[ob] -= dout[k]; });
            }
        });
    }
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Tensor y = binary_op(a, b, "mul", [](double x, double z) { return x * z; });
    if (wants_grad({&a, &b})) {
        auto ai = a.impl_ptr(), bi = b.impl_ptr();
        Shape os = y.shape();
        record_op(y, [ai, bi, os](const std::vector<double>& dout, GradSink& sink) {
            const double* pa = ai->values.data();
            const double* pb = bi->values.data();
            if (ai->requires_grad) {
                auto& da = sink.buffer_for(ai.get());
                for_each_broadcast(os, ai->shape, bi->shape, [&](int64_t k, int64_t oa, int64_t ob) {
                    da[oa] += dout[k] * pb[ob];
                });
            }
            if (bi->requires_grad) {
                auto& db = sink.buffer_for(bi.get());
                for_each_broadcast(os, ai->shape, bi->shape, [&](int64_t k, int64_t oa, int64_t ob) {
                    db[ob] += dout[k] * pa[oa];
                });
            }
        });
    }
    return y;
}

Tensor scale(const Tensor& a, double s) {
    check_defined(a, "scale");
    std::vector<double> out(a.numel());
    const double* pa = a.values().data();
    for (int64_t k = 0; k < a.numel(); ++k) out[k] = pa[k] * s;
    Tensor y = make_tensor(a.shape(), std::move(out), false);
    if (wants_grad({&a})) {
        auto ai = a.impl_ptr();
        record_op(y, [ai, s](const std::vector<double>& dout, GradSink& sink) {
            auto& da = sink.buffer_for(ai.get());
            for (size_t k = 0; k < dout.size(); ++k) da[k] += dout[k] * s;
        });
    }
    return y;
}

Tensor log(const Tensor& x) {
    check_defined(x, "log");
    std::vector<double> out(x.numel());
    const double* px = x.values().data();
    for (int64_t k = 0; k < x.numel(); ++k) {
        if (px[k] <= 0.0)
            throw DomainError("log: non-positive input " + std::to_string(px[k]));
        out[k] = std::log(px[k]);
    }
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi](const std::vector<double>& dout, GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            for (size_t k = 0; k < dout.size(); ++k) dx[k] += dout[k] / xi->values[k];
        });
    }
    return y;
}

Tensor clamp_min(const Tensor& x, double lo) {
    check_defined(x, "clamp_min");
    std::vector<double> out(x.numel());
    const double* px = x.values().data();
    for (int64_t k = 0; k < x.numel(); ++k) out[k] = std::max(px[k], lo);
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi, lo](const std::vector<double>& dout, GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            for (size_t k = 0; k < dout.size(); ++k)
                if (xi->values[k] >= lo) dx[k] += dout[k];
        });
    }
    return y;
}

Tensor gelu(const Tensor& x) {
    check_defined(x, "gelu");
    constexpr double inv_sqrt2 = 0.7071067811865476;
    std::vector<double> out(x.numel());
    const double* px = x.values().data();
    for (int64_t k = 0; k < x.numel(); ++k)
        out[k] = 0.5 * px[k] * (1.0 + std::erf(px[k] * inv_sqrt2));
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi](const std::vector<double>& dout, GradSink& sink) {
            constexpr double inv_sqrt2pi = 0.3989422804014327;
            auto& dx = sink.buffer_for(xi.get());
            for (size_t k = 0; k < dout.size(); ++k) {
                const double v = xi->values[k];
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                dx[k] += dout[k] * (cdf + v * inv_sqrt2pi * std::exp(-0.5 * v * v));
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& x, Shape new_shape) {
    check_defined(x, "reshape");
    validate_shape(new_shape, "reshape");
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    Tensor y = make_tensor(std::move(new_shape), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi](const std::vector<double>& dout, GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            for (size_t k = 0; k < dout.size(); ++k) dx[k] += dout[k];
        });
    }
    return y;
}

Tensor permute(const Tensor& x, const std::vector<int64_t>& axes) {
    check_defined(x, "permute");
    const int64_t r = x.ndim();
    if (static_cast<int64_t>(axes.size()) != r)
        throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for rank " +
                         std::to_string(r));
    std::vector<bool> seen(r, false);
    for (int64_t a : axes) {
        if (a < 0 || a >= r || seen[a])
            throw ShapeError("permute: invalid axis list for rank " + std::to_string(r));
        seen[a] = true;
    }
    const Shape& xs = x.shape();
    std::vector<int64_t> xstrides(r, 1);
    for (int64_t d = r - 2; d >= 0; --d) xstrides[d] = xstrides[d + 1] * xs[d + 1];
    Shape os(r);
    std::vector<int64_t> ostrides_in(r);  // stride in x per output axis
    for (int64_t d = 0; d < r; ++d) {
        os[d] = xs[axes[d]];
        ostrides_in[d] = xstrides[axes[d]];
    }
    const int64_t n = x.numel();
    std::vector<double> out(n);
    const double* px = x.values().data();
    {
        std::vector<int64_t> idx(r, 0);
        int64_t off = 0;
        for (int64_t k = 0; k < n; ++k) {
            out[k] = px[off];
            for (int64_t d = r - 1; d >= 0; --d) {
                ++idx[d];
                off += ostrides_in[d];
                if (idx[d] < os[d]) break;
                off -= ostrides_in[d] * os[d];
                idx[d] = 0;
            }
        }
    }
    Tensor y = make_tensor(std::move(os), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        Shape osz = y.shape();
        record_op(y, [xi, osz, ostrides_in, r](const std::vector<double>& dout, GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            std::vector<int64_t> idx(r, 0);
            int64_t off = 0;
            for (size_t k = 0; k < dout.size(); ++k) {
                dx[off] += dout[k];
                for (int64_t d = r - 1; d >= 0; --d) {
                    ++idx[d];
                    off += ostrides_in[d];
                    if (idx[d] < osz[d]) break;
                    off -= ostrides_in[d] * osz[d];
                    idx[d] = 0;
                }
            }
        });
    }
    return y;
}

Tensor transpose_last2(const Tensor& x) {
    check_defined(x, "transpose_last2");
    if (x.ndim() < 2) throw ShapeError("transpose_last2: rank must be >= 2");
    std::vector<int64_t> axes(x.ndim());
    for (int64_t d = 0; d < x.ndim(); ++d) axes[d] = d;
    std::swap(axes[x.ndim() - 2], axes[x.ndim() - 1]);
    return permute(x, axes);
}

// ---------------------------------------------------------------------------
// Matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.ndim() < 2 || b.ndim() < 2)
        throw ShapeError("matmul: rank must be >= 2, got " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));
    const int64_t p = a.dim(-2), q = a.dim(-1);
    const int64_t q2 = b.dim(-2), r = b.dim(-1);
    if (q != q2)
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    Shape batch;
    if (abatch == bbatch)
        batch = abatch;
    else if (abatch.empty())
        batch = bbatch;
    else if (bbatch.empty())
        batch = abatch;
    else
        throw ShapeError("matmul: batch dimensions differ: " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));
    const int64_t nb = shape_numel(batch);
    const int64_t sa = abatch.empty() && !batch.empty() ? 0 : p * q;
    const int64_t sb = bbatch.empty() && !batch.empty() ? 0 : q * r;
    Shape os = batch;
    os.push_back(p);
    os.push_back(r);
    std::vector<double> out(shape_numel(os));
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (int64_t i = 0; i < nb; ++i)
        MMap(out.data() + i * p * r, p, r).noalias() =
            CMap(pa + i * sa, p, q) * CMap(pb + i * sb, q, r);
    Tensor y = make_tensor(std::move(os), std::move(out), false);
    if (wants_grad({&a, &b})) {
        auto ai = a.impl_ptr(), bi = b.impl_ptr();
        record_op(y, [ai, bi, nb, sa, sb, p, q, r](const std::vector<double>& dout,
                                                   GradSink& sink) {
            const double* pa = ai->values.data();
            const double* pb = bi->values.data();
            if (ai->requires_grad) {
                auto& da = sink.buffer_for(ai.get());
                for (int64_t i = 0; i < nb; ++i)
                    MMap(da.data() + i * sa, p, q).noalias() +=
                        CMap(dout.data() + i * p * r, p, r) * CMap(pb + i * sb, q, r).transpose();
            }
            if (bi->requires_grad) {
                auto& db = sink.buffer_for(bi.get());
                for (int64_t i = 0; i < nb; ++i)
                    MMap(db.data() + i * sb, q, r).noalias() +=
                        CMap(pa + i * sa, p, q).transpose() * CMap(dout.data() + i * p * r, p, r);
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
    check_defined(x, "sum");
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor y = Tensor::scalar(s);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi](const std::vector<double>& dout, GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            for (auto& g : dx) g += dout[0];
        });
    }
    return y;
}

namespace {

// Shared forward for sum_rows/mean_rows: reduce axis -2 of [..., n, d].
Tensor reduce_rows(const Tensor& x, const char* name, bool mean) {
    check_defined(x, name);
    if (x.ndim() < 2)
        throw ShapeError(std::string(name) + ": rank must be >= 2, got " + shape_str(x.shape()));
    const int64_t n = x.dim(-2), d = x.dim(-1);
    if (mean && n == 0) throw DomainError(std::string(name) + ": empty reduction axis");
    const int64_t nb = x.numel() / std::max<int64_t>(n * d, 1);
    Shape os(x.shape().begin(), x.shape().end() - 2);
    os.push_back(d);
    const double w = mean ? 1.0 / static_cast<double>(n) : 1.0;
    std::vector<double> out(shape_numel(os), 0.0);
    const double* px = x.values().data();
    for (int64_t b = 0; b < nb; ++b)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) out[b * d + j] += px[(b * n + i) * d + j] * w;
    Tensor y = make_tensor(std::move(os), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi, nb, n, d, w](const std::vector<double>& dout, GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            for (int64_t b = 0; b < nb; ++b)
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) dx[(b * n + i) * d + j] += dout[b * d + j] * w;
        });
    }
    return y;
}

}  // namespace

Tensor sum_rows(const Tensor& x) { return reduce_rows(x, "sum_rows", false); }
Tensor mean_rows(const Tensor& x) { return reduce_rows(x, "mean_rows", true); }

Tensor max_rows(const Tensor& x, const Mask* row_mask) {
    check_defined(x, "max_rows");
    if (x.ndim() < 2)
        throw ShapeError("max_rows: rank must be >= 2, got " + shape_str(x.shape()));
    const int64_t n = x.dim(-2), d = x.dim(-1);
    const int64_t nb = x.numel() / std::max<int64_t>(n * d, 1);
    Shape expect(x.shape().begin(), x.shape().end() - 1);
    if (row_mask && row_mask->shape != expect)
        throw ShapeError("max_rows: mask shape " + shape_str(row_mask->shape) +
                         " does not match rows of " + shape_str(x.shape()));
    Shape os(x.shape().begin(), x.shape().end() - 2);
    os.push_back(d);
    std::vector<double> out(shape_numel(os));
    std::vector<int64_t> argmax(shape_numel(os));
    const double* px = x.values().data();
    for (int64_t b = 0; b < nb; ++b) {
        for (int64_t j = 0; j < d; ++j) {
            int64_t best = -1;
            double bv = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                if (row_mask && !row_mask->data[b * n + i]) continue;
                const double v = px[(b * n + i) * d + j];
                if (best < 0 || v > bv) {
                    best = i;
                    bv = v;
                }
            }
            if (best < 0) throw DomainError("max_rows: all rows masked out in batch element " +
                                            std::to_string(b));
            out[b * d + j] = bv;
            argmax[b * d + j] = best;
        }
    }
    Tensor y = make_tensor(std::move(os), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi, argmax = std::move(argmax), nb, n, d](const std::vector<double>& dout,
                                                                GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            for (int64_t b = 0; b < nb; ++b)
                for (int64_t j = 0; j < d; ++j)
                    dx[(b * n + argmax[b * d + j]) * d + j] += dout[b * d + j];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Softmax / layer norm / losses

Tensor softmax_rows(const Tensor& x, const Mask* mask) {
    check_defined(x, "softmax_rows");
    if (x.ndim() < 1) throw ShapeError("softmax_rows: rank must be >= 1");
    const int64_t d = x.dim(-1);
    if (d == 0) throw ShapeError("softmax_rows: empty last axis");
    const int64_t rows = x.numel() / d;
    std::vector<uint8_t> m;
    if (mask && mask->defined()) m = expand_mask(*mask, x.shape());
    std::vector<double> out(x.numel());
    const double* px = x.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        const uint8_t* mrow = m.empty() ? nullptr : m.data() + r * d;
        double mx = -std::numeric_limits<double>::infinity();
        int64_t kept = 0;
        for (int64_t j = 0; j < d; ++j) {
            if (mrow && !mrow[j]) continue;
            mx = std::max(mx, row[j]);
            ++kept;
        }
        // Only a mask-emptied row is a contract violation; a row whose kept
        // values are all -inf/NaN is numeric degeneracy and propagates as NaN.
        if (kept == 0)
            throw DomainError("softmax_rows: row " + std::to_string(r) + " fully masked");
        double z = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            // Excluded entries are exact zeros (the -1e9 additive surrogate
            // underflows to the same values after max subtraction).
            const double e = (!mrow || mrow[j]) ? std::exp(row[j] - mx) : 0.0;
            out[r * d + j] = e;
            z += e;
        }
        for (int64_t j = 0; j < d; ++j) out[r * d + j] /= z;
    }
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        auto yi = y.impl_ptr();
        record_op(y, [xi, yi, rows, d](const std::vector<double>& dout, GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            const double* py = yi->values.data();
            for (int64_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (int64_t j = 0; j < d; ++j) dot += dout[r * d + j] * py[r * d + j];
                for (int64_t j = 0; j < d; ++j)
                    dx[r * d + j] += py[r * d + j] * (dout[r * d + j] - dot);
            }
        });
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check_defined(x, "layer_norm");
    check_defined(gain, "layer_norm");
    check_defined(bias, "layer_norm");
    if (x.ndim() < 1) throw ShapeError("layer_norm: rank must be >= 1");
    const int64_t d = x.dim(-1);
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    if (eps < 0) throw DomainError("layer_norm: negative eps");
    const int64_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    const double* px = x.values().data();
    const double* pg = gain.values().data();
    const double* pb = bias.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int64_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mu) * is;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * pg[j] + pb[j];
        }
    }
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    if (wants_grad({&x, &gain, &bias})) {
        auto xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr();
        record_op(y, [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                      d](const std::vector<double>& dout, GradSink& sink) {
            const double* pg = gi->values.data();
            if (gi->requires_grad) {
                auto& dg = sink.buffer_for(gi.get());
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) dg[j] += dout[r * d + j] * xhat[r * d + j];
            }
            if (bi->requires_grad) {
                auto& db = sink.buffer_for(bi.get());
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) db[j] += dout[r * d + j];
            }
            if (xi->requires_grad) {
                auto& dx = sink.buffer_for(xi.get());
                for (int64_t r = 0; r < rows; ++r) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double g = dout[r * d + j] * pg[j];
                        mean_g += g;
                        mean_gx += g * xhat[r * d + j];
                    }
                    mean_g /= d;
                    mean_gx /= d;
                    for (int64_t j = 0; j < d; ++j) {
                        const double g = dout[r * d + j] * pg[j];
                        dx[r * d + j] += inv_std[r] * (g - mean_g - xhat[r * d + j] * mean_gx);
                    }
                }
            }
        });
    }
    return y;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    check_defined(x, "dropout");
    if (p < 0.0 || p >= 1.0)
        throw DomainError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    const double keep = 1.0 - p;
    std::bernoulli_distribution coin(keep);
    std::vector<uint8_t> kept(x.numel());
    std::vector<double> out(x.numel());
    const double* px = x.values().data();
    for (int64_t k = 0; k < x.numel(); ++k) {
        kept[k] = coin(rng) ? 1 : 0;
        out[k] = kept[k] ? px[k] / keep : 0.0;
    }
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi, kept = std::move(kept), keep](const std::vector<double>& dout,
                                                        GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            for (size_t k = 0; k < dout.size(); ++k)
                if (kept[k]) dx[k] += dout[k] / keep;
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Indexing ops

Tensor embed(const std::vector<int64_t>& ids, const Shape& ids_shape, const Tensor& table) {
    check_defined(table, "embed");
    if (table.ndim() != 2)
        throw ShapeError("embed: table must be rank 2, got " + shape_str(table.shape()));
    if (static_cast<int64_t>(ids.size()) != shape_numel(ids_shape))
        throw ShapeError("embed: " + std::to_string(ids.size()) + " ids for shape " +
                         shape_str(ids_shape));
    const int64_t v = table.dim(0), d = table.dim(1);
    for (int64_t id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embed: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
    Shape os = ids_shape;
    os.push_back(d);
    std::vector<double> out(ids.size() * d);
    const double* pt = table.values().data();
    for (size_t k = 0; k < ids.size(); ++k)
        std::memcpy(out.data() + k * d, pt + ids[k] * d, d * sizeof(double));
    Tensor y = make_tensor(std::move(os), std::move(out), false);
    if (wants_grad({&table})) {
        auto ti = table.impl_ptr();
        record_op(y, [ti, ids, d](const std::vector<double>& dout, GradSink& sink) {
            auto& dt = sink.buffer_for(ti.get());
            for (size_t k = 0; k < ids.size(); ++k)
                for (int64_t j = 0; j < d; ++j) dt[ids[k] * d + j] += dout[k * d + j];
        });
    }
    return y;
}

namespace {

void check_row_indices(const std::vector<int64_t>& indices, int64_t n, const char* op,
                       bool require_distinct) {
    for (int64_t i : indices)
        if (i < 0 || i >= n)
            throw IndexError(std::string(op) + ": row index " + std::to_string(i) +
                             " out of range [0," + std::to_string(n) + ")");
    if (require_distinct) {
        std::unordered_set<int64_t> seen(indices.begin(), indices.end());
        if (seen.size() != indices.size())
            throw ContractError(std::string(op) + ": duplicate row indices");
    }
}

}  // namespace

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& indices) {
    check_defined(x, "gather_rows");
    if (x.ndim() < 2)
        throw ShapeError("gather_rows: rank must be >= 2, got " + shape_str(x.shape()));
    const int64_t n = x.dim(-2), d = x.dim(-1);
    check_row_indices(indices, n, "gather_rows", false);
    const int64_t nb = x.numel() / std::max<int64_t>(n * d, 1);
    const int64_t k = static_cast<int64_t>(indices.size());
    Shape os(x.shape().begin(), x.shape().end() - 2);
    os.push_back(k);
    os.push_back(d);
    std::vector<double> out(nb * k * d);
    const double* px = x.values().data();
    for (int64_t b = 0; b < nb; ++b)
        for (int64_t j = 0; j < k; ++j)
            std::memcpy(out.data() + (b * k + j) * d, px + (b * n + indices[j]) * d,
                        d * sizeof(double));
    Tensor y = make_tensor(std::move(os), std::move(out), false);
    if (wants_grad({&x})) {
        auto xi = x.impl_ptr();
        record_op(y, [xi, indices, nb, n, k, d](const std::vector<double>& dout, GradSink& sink) {
            auto& dx = sink.buffer_for(xi.get());
            for (int64_t b = 0; b < nb; ++b)
                for (int64_t j = 0; j < k; ++j)
                    for (int64_t c = 0; c < d; ++c)
                        dx[(b * n + indices[j]) * d + c] += dout[(b * k + j) * d + c];
        });
    }
    return y;
}

Tensor scatter_rows(const Tensor& x, const std::vector<int64_t>& indices, const Tensor& rows) {
    check_defined(x, "scatter_rows");
    check_defined(rows, "scatter_rows");
    if (x.ndim() < 2)
        throw ShapeError("scatter_rows: rank must be >= 2, got " + shape_str(x.shape()));
    const int64_t n = x.dim(-2), d = x.dim(-1);
    check_row_indices(indices, n, "scatter_rows", true);
    const int64_t k = static_cast<int64_t>(indices.size());
    Shape expect(x.shape().begin(), x.shape().end() - 2);
    expect.push_back(k);
    expect.push_back(d);
    if (rows.shape() != expect)
        throw ShapeError("scatter_rows: rows shape " + shape_str(rows.shape()) + ", expected " +
                         shape_str(expect));
    const int64_t nb = x.numel() / std::max<int64_t>(n * d, 1);
    std::vector<double> out(x.values().begin(), x.values().end());
    const double* pr = rows.values().data();
    for (int64_t b = 0; b < nb; ++b)
        for (int64_t j = 0; j < k; ++j)
            std::memcpy(out.data() + (b * n + indices[j]) * d, pr + (b * k + j) * d,
                        d * sizeof(double));
    Tensor y = make_tensor(x.shape(), std::move(out), false);
    if (wants_grad({&x, &rows})) {
        auto xi = x.impl_ptr(), ri = rows.impl_ptr();
        record_op(y, [xi, ri, indices, nb, n, k, d](const std::vector<double>& dout,
                                                    GradSink& sink) {
            if (xi->requires_grad) {
                auto& dx = sink.buffer_for(xi.get());
                std::vector<uint8_t> replaced(n, 0);
                for (int64_t j = 0; j < k; ++j) replaced[indices[j]] = 1;
                for (int64_t b = 0; b < nb; ++b)
                    for (int64_t i = 0; i < n; ++i) {
                        if (replaced[i]) continue;
                        for (int64_t c = 0; c < d; ++c)
                            dx[(b * n + i) * d + c] += dout[(b * n + i) * d + c];
                    }
            }
            if (ri->requires_grad) {
                auto& dr = sink.buffer_for(ri.get());
                for (int64_t b = 0; b < nb; ++b)
                    for (int64_t j = 0; j < k; ++j)
                        for (int64_t c = 0; c < d; ++c)
                            dr[(b * k + j) * d + c] += dout[(b * n + indices[j]) * d + c];
            }
        });
    }
    return y;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
    check_defined(logits, "cross_entropy");
    if (logits.ndim() != 2)
        throw ShapeError("cross_entropy: logits must be rank 2, got " + shape_str(logits.shape()));
    const int64_t batch = logits.dim(0), c = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != batch)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
    if (batch == 0) throw DomainError("cross_entropy: empty batch");
    for (int64_t l : labels)
        if (l < 0 || l >= c)
            throw IndexError("cross_entropy: label " + std::to_string(l) + " out of range [0," +
                             std::to_string(c) + ")");
    const double* pl = logits.values().data();
    std::vector<double> probs(logits.numel());
    double loss = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
        const double* row = pl + b * c;
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (int64_t j = 0; j < c; ++j) probs[b * c + j] = std::exp(row[j] - lse);
        loss += lse - row[labels[b]];
    }
    loss /= batch;
    Tensor y = Tensor::scalar(loss);
    if (wants_grad({&logits})) {
        auto li = logits.impl_ptr();
        record_op(y, [li, labels, probs = std::move(probs), batch,
                      c](const std::vector<double>& dout, GradSink& sink) {
            auto& dl = sink.buffer_for(li.get());
            const double g = dout[0] / batch;
            for (int64_t b = 0; b < batch; ++b) {
                for (int64_t j = 0; j < c; ++j) dl[b * c + j] += g * probs[b * c + j];
                dl[b * c + labels[b]] -= g;
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Initializers / utilities

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    validate_shape(shape, "randn");
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor xavier_uniform(int64_t fan_in, int64_t fan_out, Rng& rng, bool requires_grad) {
    if (fan_in <= 0 || fan_out <= 0) throw ShapeError("xavier_uniform: non-positive fan");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = dist(rng);
    return make_tensor({fan_in, fan_out}, std::move(v), requires_grad);
}

bool all_finite(const Tensor& x) {
    for (double v : x.values())
        if (!std::isfinite(v)) return false;
    return true;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
#endif
}

}  // namespace hst
