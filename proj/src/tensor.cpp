#include "td/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "op_common.hpp"
#include "td/kernels.hpp"
#include "td/rng.hpp"

namespace td {

using detail::K;
using detail::finish;
using detail::out_grad;
using detail::require_same_shape;
using detail::shape_fail;

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

void validate_shape(const Shape& s) {
    if (s.empty()) throw ValidationError("tensor shape must have at least one dimension");
    for (size_t d : s)
        if (d == 0) throw ValidationError("tensor shape dimensions must be positive, got " + shape_str(s));
}

template <class T>
thread_local TapeT<T>* t_current = nullptr;

}  // namespace

template <class T>
void check_finite(const char* op, const TensorT<T>& t) {
    size_t bad = K<T>::count_nonfinite(t.size(), t.data());
    if (bad)
        throw NumericError(std::string(op) + ": " + std::to_string(bad) +
                           " non-finite value(s) in output of shape " + shape_str(t.shape()));
}

// --- TensorT -----------------------------------------------------------------

template <class T>
TensorT<T>::TensorT(Shape shape) {
    validate_shape(shape);
    n_ = std::make_shared<detail::Node<T>>();
    n_->value.assign(shape_numel(shape), T(0));
    n_->shape = std::move(shape);
}

template <class T>
TensorT<T>::TensorT(Shape shape, std::vector<T> data) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size())
        throw ValidationError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    n_ = std::make_shared<detail::Node<T>>();
    n_->shape = std::move(shape);
    n_->value = std::move(data);
}

template <class T>
TensorT<T> TensorT<T>::full(Shape shape, T v) {
    TensorT out(std::move(shape));
    std::fill(out.vec().begin(), out.vec().end(), v);
    return out;
}

template <class T>
T TensorT<T>::item() const {
    if (!n_ || n_->value.size() != 1)
        throw ValidationError("item() requires a single-element tensor, got " +
                              (n_ ? shape_str(n_->shape) : std::string("<undefined>")));
    return n_->value[0];
}

template <class T>
TensorT<T> TensorT<T>::clone() const {
    TensorT out;
    out.n_ = std::make_shared<detail::Node<T>>();
    out.n_->shape = n_->shape;
    out.n_->value = n_->value;
    return out;
}

// --- TapeT -------------------------------------------------------------------

template <class T>
TapeT<T>::TapeT() {
    prev_ = t_current<T>;
    t_current<T> = this;
}

template <class T>
TapeT<T>::~TapeT() {
    t_current<T> = prev_;
}

template <class T>
TapeT<T>* TapeT<T>::current() {
    return t_current<T>;
}

template <class T>
void TapeT<T>::backward(const TensorT<T>& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ValidationError("backward: loss must be a scalar tensor, got " +
                              (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (steps_.empty()) throw ValidationError("backward: tape is empty");
    auto node = loss.node();
    node->grad_buf()[0] = T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// --- elementwise -------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape("add", a.shape(), b.shape());
    TensorT<T> out(a.shape());
    K<T>::vadd(a.size(), a.data(), b.data(), out.data());
    auto an = a.node(), bn = b.node(), on = out.node();
    finish("add", out, {&a, &b}, [an, bn, on] {
        const T* g = out_grad(on);
        if (!g) return;
        size_t n = on->value.size();
        if (an->requires_grad) K<T>::vaxpy(n, T(1), g, an->grad_buf().data());
        if (bn->requires_grad) K<T>::vaxpy(n, T(1), g, bn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape("sub", a.shape(), b.shape());
    TensorT<T> out(a.shape());
    K<T>::vsub(a.size(), a.data(), b.data(), out.data());
    auto an = a.node(), bn = b.node(), on = out.node();
    finish("sub", out, {&a, &b}, [an, bn, on] {
        const T* g = out_grad(on);
        if (!g) return;
        size_t n = on->value.size();
        if (an->requires_grad) K<T>::vaxpy(n, T(1), g, an->grad_buf().data());
        if (bn->requires_grad) K<T>::vaxpy(n, T(-1), g, bn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape("mul", a.shape(), b.shape());
    TensorT<T> out(a.shape());
    K<T>::vmul(a.size(), a.data(), b.data(), out.data());
    auto an = a.node(), bn = b.node(), on = out.node();
    finish("mul", out, {&a, &b}, [an, bn, on] {
        const T* g = out_grad(on);
        if (!g) return;
        size_t n = on->value.size();
        if (an->requires_grad) K<T>::vmul_acc(n, g, bn->value.data(), an->grad_buf().data());
        if (bn->requires_grad) K<T>::vmul_acc(n, g, an->value.data(), bn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> scalar_scale(const TensorT<T>& x, T s) {
    TensorT<T> out(x.shape());
    K<T>::vscale(x.size(), x.data(), s, out.data());
    auto xn = x.node(), on = out.node();
    finish("scalar_scale", out, {&x}, [xn, on, s] {
        const T* g = out_grad(on);
        if (!g) return;
        if (xn->requires_grad) K<T>::vaxpy(on->value.size(), s, g, xn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> scalar_add(const TensorT<T>& x, T s) {
    TensorT<T> out(x.shape());
    K<T>::vadd_scalar(x.size(), x.data(), s, out.data());
    auto xn = x.node(), on = out.node();
    finish("scalar_add", out, {&x}, [xn, on] {
        const T* g = out_grad(on);
        if (!g) return;
        if (xn->requires_grad) K<T>::vaxpy(on->value.size(), T(1), g, xn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> gelu(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    K<T>::gelu_fwd(x.size(), x.data(), out.data());
    auto xn = x.node(), on = out.node();
    finish("gelu", out, {&x}, [xn, on] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        K<T>::gelu_bwd(on->value.size(), xn->value.data(), g, xn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> silu(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    K<T>::silu_fwd(x.size(), x.data(), out.data());
    auto xn = x.node(), on = out.node();
    finish("silu", out, {&x}, [xn, on] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        K<T>::silu_bwd(on->value.size(), xn->value.data(), g, xn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> tanh(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    K<T>::tanh_fwd(x.size(), x.data(), out.data());
    auto xn = x.node(), on = out.node();
    finish("tanh", out, {&x}, [xn, on] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        K<T>::tanh_bwd(on->value.size(), on->value.data(), g, xn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> exp(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    K<T>::exp_fwd(x.size(), x.data(), out.data());
    auto xn = x.node(), on = out.node();
    finish("exp", out, {&x}, [xn, on] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        K<T>::exp_bwd(on->value.size(), on->value.data(), g, xn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> clamp(const TensorT<T>& x, T lo, T hi) {
    if (!(lo <= hi)) throw ValidationError("clamp: lo must be <= hi");
    TensorT<T> out(x.shape());
    const T* xv = x.data();
    T* ov = out.data();
    for (size_t i = 0; i < x.size(); ++i) ov[i] = std::min(std::max(xv[i], lo), hi);
    auto xn = x.node(), on = out.node();
    finish("clamp", out, {&x}, [xn, on, lo, hi] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        const T* xv = xn->value.data();
        T* dx = xn->grad_buf().data();
        for (size_t i = 0; i < on->value.size(); ++i)
            if (xv[i] > lo && xv[i] < hi) dx[i] += g[i];
    });
    return out;
}

// --- matmul ------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != bs.size() || (as.size() != 2 && as.size() != 3))
        shape_fail("matmul", "expects two 2-D or two 3-D tensors, got " + shape_str(as) + " x " +
                                 shape_str(bs));
    size_t batch = as.size() == 3 ? as[0] : 1;
    if (as.size() == 3 && as[0] != bs[0])
        shape_fail("matmul", "batch dims differ: " + shape_str(as) + " x " + shape_str(bs));
    size_t m = as[as.size() - 2], k = as[as.size() - 1];
    size_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
    if (k != k2)
        shape_fail("matmul", "inner dims differ: " + shape_str(as) + " x " + shape_str(bs));

    Shape os = as.size() == 3 ? Shape{batch, m, n} : Shape{m, n};
    TensorT<T> out(os);
    for (size_t bi = 0; bi < batch; ++bi)
        K<T>::gemm_nn(m, n, k, a.data() + bi * m * k, k, b.data() + bi * k * n, n,
                      out.data() + bi * m * n, n, false);

    auto an = a.node(), bn = b.node(), on = out.node();
    finish("matmul", out, {&a, &b}, [an, bn, on, batch, m, n, k] {
        const T* g = out_grad(on);
        if (!g) return;
        for (size_t bi = 0; bi < batch; ++bi) {
            const T* gb = g + bi * m * n;
            if (an->requires_grad)
                K<T>::gemm_nt(m, k, n, gb, n, bn->value.data() + bi * k * n, n,
                              an->grad_buf().data() + bi * m * k, k, true);
            if (bn->requires_grad)
                K<T>::gemm_tn(k, n, m, an->value.data() + bi * m * k, k, gb, n,
                              bn->grad_buf().data() + bi * k * n, n, true);
        }
    });
    return out;
}

// --- normalization -----------------------------------------------------------

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, T eps) {
    size_t cols = x.shape().back();
    size_t rows = x.size() / cols;
    TensorT<T> out(x.shape());
    auto saved = std::make_shared<std::vector<T>>(2 * rows);
    K<T>::layernorm_fwd(rows, cols, x.data(), eps, out.data(), saved->data(),
                        saved->data() + rows);
    auto xn = x.node(), on = out.node();
    finish("layer_norm", out, {&x}, [xn, on, saved, rows, cols] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        K<T>::layernorm_bwd(rows, cols, xn->value.data(), saved->data(), saved->data() + rows, g,
                            xn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> softmax(const TensorT<T>& x, size_t axis) {
    const Shape& xs = x.shape();
    if (axis >= xs.size())
        shape_fail("softmax", "axis " + std::to_string(axis) + " out of range for " + shape_str(xs));
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= xs[d];
    for (size_t d = axis + 1; d < xs.size(); ++d) inner *= xs[d];
    size_t len = xs[axis];

    TensorT<T> out(xs);
    if (inner == 1) {
        K<T>::softmax_rows(outer, len, x.data(), out.data());
    } else {
        const T* xv = x.data();
        T* ov = out.data();
        for (size_t o = 0; o < outer; ++o) {
            for (size_t i = 0; i < inner; ++i) {
                const T* xp = xv + o * len * inner + i;
                T* op = ov + o * len * inner + i;
                T mx = xp[0];
                for (size_t l = 1; l < len; ++l) mx = std::max(mx, xp[l * inner]);
                T sum = T(0);
                for (size_t l = 0; l < len; ++l) {
                    op[l * inner] = std::exp(xp[l * inner] - mx);
                    sum += op[l * inner];
                }
                T invs = T(1) / sum;
                for (size_t l = 0; l < len; ++l) op[l * inner] *= invs;
            }
        }
    }
    auto xn = x.node(), on = out.node();
    finish("softmax", out, {&x}, [xn, on, outer, len, inner] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        T* dx = xn->grad_buf().data();
        const T* y = on->value.data();
        if (inner == 1) {
            K<T>::softmax_bwd_rows(outer, len, y, g, dx);
            return;
        }
        for (size_t o = 0; o < outer; ++o) {
            for (size_t i = 0; i < inner; ++i) {
                size_t base = o * len * inner + i;
                T dot = T(0);
                for (size_t l = 0; l < len; ++l) dot += y[base + l * inner] * g[base + l * inner];
                for (size_t l = 0; l < len; ++l)
                    dx[base + l * inner] += y[base + l * inner] * (g[base + l * inner] - dot);
            }
        }
    });
    return out;
}

// --- movement ----------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
    validate_shape(shape);
    if (shape_numel(shape) != x.size())
        shape_fail("reshape", "cannot reshape " + shape_str(x.shape()) + " (" +
                                  std::to_string(x.size()) + " elements) to " + shape_str(shape));
    TensorT<T> out(std::move(shape), x.vec());
    auto xn = x.node(), on = out.node();
    finish("reshape", out, {&x}, [xn, on] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        K<T>::vaxpy(on->value.size(), T(1), g, xn->grad_buf().data());
    });
    return out;
}

namespace {

// Permutation copy out <- x with out shape = perm(x shape).
// When `add_to_out` the copy accumulates (used for grad of the inverse perm).
template <class T, bool kAccumulate>
void permute_copy(const Shape& xs, const std::vector<size_t>& axes, const T* xv, T* ov) {
    size_t nd = xs.size();
    Shape os(nd);
    for (size_t d = 0; d < nd; ++d) os[d] = xs[axes[d]];
    std::vector<size_t> xstride(nd, 1);
    for (size_t d = nd - 1; d-- > 0;) xstride[d] = xstride[d + 1] * xs[d + 1];

    // Contiguous tail: trailing axes that keep their position can be copied as
    // one block.
    size_t tail = 0;
    size_t block = 1;
    while (tail < nd && axes[nd - 1 - tail] == nd - 1 - tail) {
        block *= xs[nd - 1 - tail];
        ++tail;
    }
    size_t head = nd - tail;
    if (head == 0) {
        if constexpr (kAccumulate)
            for (size_t i = 0; i < block; ++i) ov[i] += xv[i];
        else
            std::memcpy(ov, xv, block * sizeof(T));
        return;
    }

    std::vector<size_t> coord(head, 0);
    size_t outer = 1;
    for (size_t d = 0; d < head; ++d) outer *= os[d];
    for (size_t block_idx = 0; block_idx < outer; ++block_idx) {
        size_t xi = 0;
        for (size_t d = 0; d < head; ++d) xi += coord[d] * xstride[axes[d]];
        const T* src = xv + xi;
        T* dst = ov + block_idx * block;
        if constexpr (kAccumulate)
            for (size_t i = 0; i < block; ++i) dst[i] += src[i];
        else
            std::memcpy(dst, src, block * sizeof(T));
        for (size_t d = head; d-- > 0;) {
            if (++coord[d] < os[d]) break;
            coord[d] = 0;
        }
    }
}

}  // namespace

template <class T>
TensorT<T> transpose(const TensorT<T>& x, std::vector<size_t> axes) {
    const Shape& xs = x.shape();
    size_t nd = xs.size();
    if (axes.size() != nd)
        shape_fail("transpose", "axes count " + std::to_string(axes.size()) +
                                    " does not match rank of " + shape_str(xs));
    std::vector<bool> seen(nd, false);
    for (size_t a : axes) {
        if (a >= nd || seen[a]) shape_fail("transpose", "axes are not a permutation");
        seen[a] = true;
    }
    Shape os(nd);
    for (size_t d = 0; d < nd; ++d) os[d] = xs[axes[d]];
    TensorT<T> out(os);
    permute_copy<T, false>(xs, axes, x.data(), out.data());

    auto xn = x.node(), on = out.node();
    finish("transpose", out, {&x}, [xn, on, axes, os] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        // grad of input = inverse permutation applied to output grad
        size_t nd = axes.size();
        std::vector<size_t> inv(nd);
        for (size_t d = 0; d < nd; ++d) inv[axes[d]] = d;
        permute_copy<T, true>(os, inv, g, xn->grad_buf().data());
    });
    return out;
}

template <class T>
TensorT<T> slice(const TensorT<T>& x, size_t axis, size_t start, size_t stop) {
    const Shape& xs = x.shape();
    if (axis >= xs.size())
        shape_fail("slice", "axis " + std::to_string(axis) + " out of range for " + shape_str(xs));
    if (start >= stop || stop > xs[axis])
        shape_fail("slice", "range [" + std::to_string(start) + "," + std::to_string(stop) +
                                ") invalid for axis of length " + std::to_string(xs[axis]));
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= xs[d];
    for (size_t d = axis + 1; d < xs.size(); ++d) inner *= xs[d];
    size_t len = xs[axis], out_len = stop - start;

    Shape os = xs;
    os[axis] = out_len;
    TensorT<T> out(os);
    for (size_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * out_len * inner, x.data() + (o * len + start) * inner,
                    out_len * inner * sizeof(T));

    auto xn = x.node(), on = out.node();
    finish("slice", out, {&x}, [xn, on, outer, inner, len, out_len, start] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        T* dx = xn->grad_buf().data();
        for (size_t o = 0; o < outer; ++o)
            K<T>::vaxpy(out_len * inner, T(1), g + o * out_len * inner,
                        dx + (o * len + start) * inner);
    });
    return out;
}

template <class T>
TensorT<T> concat(std::span<const TensorT<T>> parts, size_t axis) {
    if (parts.empty()) throw ValidationError("concat: needs at least one tensor");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size())
        shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
    size_t total = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.size() != s0.size()) shape_fail("concat", "rank mismatch between inputs");
        for (size_t d = 0; d < ps.size(); ++d)
            if (d != axis && ps[d] != s0[d])
                shape_fail("concat", "shape mismatch " + shape_str(s0) + " vs " + shape_str(ps));
        total += ps[axis];
    }
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    Shape os = s0;
    os[axis] = total;
    TensorT<T> out(os);
    size_t off = 0;
    for (const auto& p : parts) {
        size_t plen = p.shape()[axis];
        for (size_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total + off) * inner, p.data() + o * plen * inner,
                        plen * inner * sizeof(T));
        off += plen;
    }

    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    nodes.reserve(parts.size());
    bool any = false;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        any = any || p.requires_grad();
    }
    check_finite("concat", out);
    TapeT<T>* tape = TapeT<T>::current();
    if (tape && any) {
        out.set_requires_grad(true);
        auto on = out.node();
        tape->record([nodes, on, outer, inner, total, axis] {
            const T* g = out_grad(on);
            if (!g) return;
            size_t off = 0;
            for (const auto& node : nodes) {
                size_t plen = node->shape[axis];
                if (node->requires_grad) {
                    T* dx = node->grad_buf().data();
                    for (size_t o = 0; o < outer; ++o)
                        K<T>::vaxpy(plen * inner, T(1), g + (o * total + off) * inner,
                                    dx + o * plen * inner);
                }
                off += plen;
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> tile(const TensorT<T>& x, size_t reps) {
    if (reps == 0) throw ValidationError("tile: reps must be positive");
    Shape os = x.shape();
    os[0] *= reps;
    TensorT<T> out(os);
    size_t n = x.size();
    for (size_t r = 0; r < reps; ++r) std::memcpy(out.data() + r * n, x.data(), n * sizeof(T));
    auto xn = x.node(), on = out.node();
    finish("tile", out, {&x}, [xn, on, reps, n] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        T* dx = xn->grad_buf().data();
        for (size_t r = 0; r < reps; ++r) K<T>::vaxpy(n, T(1), g + r * n, dx);
    });
    return out;
}

template <class T>
TensorT<T> repeat_rows(const TensorT<T>& x, size_t r) {
    if (x.ndim() != 2) shape_fail("repeat_rows", "expects a 2-D tensor, got " + shape_str(x.shape()));
    if (r == 0) throw ValidationError("repeat_rows: repeat count must be positive");
    size_t rows = x.shape()[0], cols = x.shape()[1];
    TensorT<T> out({rows * r, cols});
    for (size_t i = 0; i < rows; ++i)
        for (size_t k = 0; k < r; ++k)
            std::memcpy(out.data() + (i * r + k) * cols, x.data() + i * cols, cols * sizeof(T));
    auto xn = x.node(), on = out.node();
    finish("repeat_rows", out, {&x}, [xn, on, rows, cols, r] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        T* dx = xn->grad_buf().data();
        for (size_t i = 0; i < rows; ++i)
            for (size_t k = 0; k < r; ++k)
                K<T>::vaxpy(cols, T(1), g + (i * r + k) * cols, dx + i * cols);
    });
    return out;
}

// --- reductions --------------------------------------------------------------

template <class T>
TensorT<T> sum(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::scalar(K<T>::reduce_sum(x.size(), x.data()));
    auto xn = x.node(), on = out.node();
    finish("sum", out, {&x}, [xn, on] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        T* dx = xn->grad_buf().data();
        T gv = g[0];
        for (size_t i = 0; i < xn->value.size(); ++i) dx[i] += gv;
    });
    return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& x) {
    T inv = T(1) / static_cast<T>(x.size());
    TensorT<T> out = TensorT<T>::scalar(K<T>::reduce_sum(x.size(), x.data()) * inv);
    auto xn = x.node(), on = out.node();
    finish("mean", out, {&x}, [xn, on, inv] {
        const T* g = out_grad(on);
        if (!g || !xn->requires_grad) return;
        T* dx = xn->grad_buf().data();
        T gv = g[0] * inv;
        for (size_t i = 0; i < xn->value.size(); ++i) dx[i] += gv;
    });
    return out;
}

template <class T>
TensorT<T> mse_loss(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape("mse_loss", a.shape(), b.shape());
    T inv = T(1) / static_cast<T>(a.size());
    TensorT<T> out = TensorT<T>::scalar(K<T>::reduce_sqdiff(a.size(), a.data(), b.data()) * inv);
    auto an = a.node(), bn = b.node(), on = out.node();
    finish("mse_loss", out, {&a, &b}, [an, bn, on, inv] {
        const T* g = out_grad(on);
        if (!g) return;
        size_t n = an->value.size();
        T c = T(2) * inv * g[0];
        const T* av = an->value.data();
        const T* bv = bn->value.data();
        if (an->requires_grad) {
            T* da = an->grad_buf().data();
            for (size_t i = 0; i < n; ++i) da[i] += c * (av[i] - bv[i]);
        }
        if (bn->requires_grad) {
            T* db = bn->grad_buf().data();
            for (size_t i = 0; i < n; ++i) db[i] -= c * (av[i] - bv[i]);
        }
    });
    return out;
}

// --- sources -----------------------------------------------------------------

template <class T>
TensorT<T> random_normal(Shape shape, uint64_t seed) {
    TensorT<T> out(std::move(shape));
    Rng rng(seed);
    rng.fill_normal(std::span<T>(out.vec()));
    return out;
}

// --- explicit instantiations ---------------------------------------------------

#define TD_INSTANTIATE(T)                                                                       \
    template class TensorT<T>;                                                                  \
    template class TapeT<T>;                                                                    \
    template void check_finite<T>(const char*, const TensorT<T>&);                              \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> scalar_scale<T>(const TensorT<T>&, T);                                  \
    template TensorT<T> scalar_add<T>(const TensorT<T>&, T);                                    \
    template TensorT<T> gelu<T>(const TensorT<T>&);                                             \
    template TensorT<T> silu<T>(const TensorT<T>&);                                             \
    template TensorT<T> tanh<T>(const TensorT<T>&);                                             \
    template TensorT<T> exp<T>(const TensorT<T>&);                                              \
    template TensorT<T> clamp<T>(const TensorT<T>&, T, T);                                      \
    template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                        \
    template TensorT<T> layer_norm<T>(const TensorT<T>&, T);                                    \
    template TensorT<T> softmax<T>(const TensorT<T>&, size_t);                                  \
    template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                                   \
    template TensorT<T> transpose<T>(const TensorT<T>&, std::vector<size_t>);                   \
    template TensorT<T> slice<T>(const TensorT<T>&, size_t, size_t, size_t);                    \
    template TensorT<T> concat<T>(std::span<const TensorT<T>>, size_t);                         \
    template TensorT<T> tile<T>(const TensorT<T>&, size_t);                                     \
    template TensorT<T> repeat_rows<T>(const TensorT<T>&, size_t);                              \
    template TensorT<T> sum<T>(const TensorT<T>&);                                              \
    template TensorT<T> mean<T>(const TensorT<T>&);                                             \
    template TensorT<T> mse_loss<T>(const TensorT<T>&, const TensorT<T>&);                      \
    template TensorT<T> random_normal<T>(Shape, uint64_t);

TD_INSTANTIATE(float)
TD_INSTANTIATE(double)

#undef TD_INSTANTIATE

}  // namespace td
