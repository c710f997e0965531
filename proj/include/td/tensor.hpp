#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "td/errors.hpp"

namespace td {

// Dense row-major tensor with reverse-mode autodiff.
//
// Values are float for all training/sampling paths; a double instantiation
// (Tensor64/Tape64) exists solely for finite-difference gradient checks.
// There is no implicit broadcasting: every primitive demands exact shape
// agreement except scalar_scale/scalar_add, and shape coercion is done with
// explicit ops (reshape/transpose/slice/concat/tile/repeat_rows).
// Every primitive verifies its output is finite and throws NumericError
// otherwise; NaN/Inf never propagates silently.

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::vector<T>& grad_buf() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};
}  // namespace detail

template <class T>
class TensorT {
  public:
    TensorT() = default;
    explicit TensorT(Shape shape);
    TensorT(Shape shape, std::vector<T> data);

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
    static TensorT full(Shape shape, T v);
    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    size_t ndim() const { return n_->shape.size(); }
    size_t size() const { return n_->value.size(); }
    const T* data() const { return n_->value.data(); }
    T* data() { return n_->value.data(); }
    const std::vector<T>& vec() const { return n_->value; }
    std::vector<T>& vec() { return n_->value; }
    T item() const;

    bool requires_grad() const { return n_ && n_->requires_grad; }
    TensorT& set_requires_grad(bool v) {
        n_->requires_grad = v;
        return *this;
    }
    // Gradient buffer; materializes zeros on first access so leaves that are
    // unreachable from the loss read back as zero.
    std::vector<T>& grad() { return n_->grad_buf(); }
    bool has_grad() const { return n_ && !n_->grad.empty(); }
    void zero_grad() {
        if (n_ && !n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    // Deep copy of values (fresh node, no grad history).
    TensorT clone() const;

    std::shared_ptr<detail::Node<T>> node() const { return n_; }

  private:
    std::shared_ptr<detail::Node<T>> n_;
};

// Execution tape. Constructing one makes it the active tape for the current
// thread (tapes nest, innermost wins); primitives executed while a tape is
// active and touching requires_grad inputs record a backward step. backward()
// replays the steps in exact reverse execution order, accumulating gradients
// additively into shared inputs.
template <class T>
class TapeT {
  public:
    TapeT();
    ~TapeT();
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    void backward(const TensorT<T>& loss);
    size_t size() const { return steps_.size(); }
    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    static TapeT* current();

  private:
    std::vector<std::function<void()>> steps_;
    TapeT* prev_ = nullptr;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;
using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// --- elementwise ---
template <class T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <class T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <class T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <class T> TensorT<T> scalar_scale(const TensorT<T>& x, T s);
template <class T> TensorT<T> scalar_add(const TensorT<T>& x, T s);
template <class T> TensorT<T> gelu(const TensorT<T>& x);
template <class T> TensorT<T> silu(const TensorT<T>& x);
template <class T> TensorT<T> tanh(const TensorT<T>& x);
template <class T> TensorT<T> exp(const TensorT<T>& x);
template <class T> TensorT<T> clamp(const TensorT<T>& x, T lo, T hi);

// --- linear algebra ---
// 2-D [M,K]x[K,N] or stacked 3-D [B,M,K]x[B,K,N].
template <class T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

// x: [C,H,W] or [B,C,H,W]; w: [OC,C,kh,kw]; bias: [OC] or undefined.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  size_t stride, size_t padding);
// x: [C,H,W] or [B,C,H,W]; w: [IC,OC,kh,kw]; bias: [OC] or undefined.
template <class T>
TensorT<T> transposed_conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                             size_t stride, size_t padding);

// --- normalization / attention ---
// Normalizes over the last axis; no affine parameters.
template <class T> TensorT<T> layer_norm(const TensorT<T>& x, T eps = T(1e-5));
template <class T> TensorT<T> softmax(const TensorT<T>& x, size_t axis);

// --- movement ---
template <class T> TensorT<T> reshape(const TensorT<T>& x, Shape shape);
template <class T> TensorT<T> transpose(const TensorT<T>& x, std::vector<size_t> axes);
template <class T> TensorT<T> slice(const TensorT<T>& x, size_t axis, size_t start, size_t stop);
template <class T> TensorT<T> concat(std::span<const TensorT<T>> parts, size_t axis);
// Repeats the whole tensor `reps` times along axis 0.
template <class T> TensorT<T> tile(const TensorT<T>& x, size_t reps);
// [R,C] -> [R*r, C], row i repeated r consecutive times.
template <class T> TensorT<T> repeat_rows(const TensorT<T>& x, size_t r);

// --- reductions ---
template <class T> TensorT<T> sum(const TensorT<T>& x);
template <class T> TensorT<T> mean(const TensorT<T>& x);
template <class T> TensorT<T> mse_loss(const TensorT<T>& a, const TensorT<T>& b);

// --- sources ---
// Deterministic standard-normal tensor: splitmix64 counter stream + Box-Muller
// (see td::Rng). Identical (shape, seed) gives bitwise-identical tensors.
template <class T> TensorT<T> random_normal(Shape shape, uint64_t seed);
inline Tensor random_normal(Shape shape, uint64_t seed) {
    return random_normal<float>(std::move(shape), seed);
}

// Throws NumericError naming `op` if any element of t is NaN/Inf.
template <class T> void check_finite(const char* op, const TensorT<T>& t);

}  // namespace td
