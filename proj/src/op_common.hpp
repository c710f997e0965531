#pragma once

// Internal helpers shared by the primitive implementations (tensor.cpp,
// conv.cpp). Not part of the public headers.

#include <initializer_list>
#include <memory>
#include <string>

#include "td/kernels.hpp"
#include "td/tensor.hpp"

namespace td::detail {

[[noreturn]] inline void shape_fail(const char* op, const std::string& detail) {
    throw ShapeError(std::string(op) + ": " + detail);
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    if (a != b) shape_fail(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Kernel shim: float routes through the runtime-dispatched table, double
// through the scalar reference templates (the 64-bit path exists only for
// gradient checks).
template <class T>
struct K;

template <>
struct K<float> {
    static const kern::Table& t() { return kern::table(); }
    static void gemm_nn(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b,
                        size_t ldb, float* c, size_t ldc, bool acc) {
        t().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
    }
    static void gemm_nt(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b,
                        size_t ldb, float* c, size_t ldc, bool acc) {
        t().gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, acc);
    }
    static void gemm_tn(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b,
                        size_t ldb, float* c, size_t ldc, bool acc) {
        t().gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, acc);
    }
    static void vadd(size_t n, const float* a, const float* b, float* o) { t().vadd(n, a, b, o); }
    static void vsub(size_t n, const float* a, const float* b, float* o) { t().vsub(n, a, b, o); }
    static void vmul(size_t n, const float* a, const float* b, float* o) { t().vmul(n, a, b, o); }
    static void vscale(size_t n, const float* a, float s, float* o) { t().vscale(n, a, s, o); }
    static void vadd_scalar(size_t n, const float* a, float s, float* o) { t().vadd_scalar(n, a, s, o); }
    static void vaxpy(size_t n, float al, const float* x, float* y) { t().vaxpy(n, al, x, y); }
    static void vmul_acc(size_t n, const float* a, const float* b, float* o) { t().vmul_acc(n, a, b, o); }
    static void silu_fwd(size_t n, const float* x, float* y) { t().silu_fwd(n, x, y); }
    static void silu_bwd(size_t n, const float* x, const float* dy, float* dx) { t().silu_bwd(n, x, dy, dx); }
    static void gelu_fwd(size_t n, const float* x, float* y) { t().gelu_fwd(n, x, y); }
    static void gelu_bwd(size_t n, const float* x, const float* dy, float* dx) { t().gelu_bwd(n, x, dy, dx); }
    static void tanh_fwd(size_t n, const float* x, float* y) { t().tanh_fwd(n, x, y); }
    static void tanh_bwd(size_t n, const float* y, const float* dy, float* dx) { t().tanh_bwd(n, y, dy, dx); }
    static void exp_fwd(size_t n, const float* x, float* y) { t().exp_fwd(n, x, y); }
    static void exp_bwd(size_t n, const float* y, const float* dy, float* dx) { t().exp_bwd(n, y, dy, dx); }
    static void softmax_rows(size_t r, size_t c, const float* x, float* y) { t().softmax_rows(r, c, x, y); }
    static void softmax_bwd_rows(size_t r, size_t c, const float* y, const float* dy, float* dx) {
        t().softmax_bwd_rows(r, c, y, dy, dx);
    }
    static void layernorm_fwd(size_t r, size_t c, const float* x, float eps, float* y, float* mu,
                              float* rs) {
        t().layernorm_fwd(r, c, x, eps, y, mu, rs);
    }
    static void layernorm_bwd(size_t r, size_t c, const float* x, const float* mu, const float* rs,
                              const float* dy, float* dx) {
        t().layernorm_bwd(r, c, x, mu, rs, dy, dx);
    }
    static float reduce_sum(size_t n, const float* x) { return t().reduce_sum(n, x); }
    static float reduce_sqdiff(size_t n, const float* a, const float* b) { return t().reduce_sqdiff(n, a, b); }
    static size_t count_nonfinite(size_t n, const float* x) { return t().count_nonfinite(n, x); }
};

template <>
struct K<double> {
    static void gemm_nn(size_t m, size_t n, size_t k, const double* a, size_t lda, const double* b,
                        size_t ldb, double* c, size_t ldc, bool acc) {
        kern::scalar::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, acc);
    }
    static void gemm_nt(size_t m, size_t n, size_t k, const double* a, size_t lda, const double* b,
                        size_t ldb, double* c, size_t ldc, bool acc) {
        kern::scalar::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, acc);
    }
    static void gemm_tn(size_t m, size_t n, size_t k, const double* a, size_t lda, const double* b,
                        size_t ldb, double* c, size_t ldc, bool acc) {
        kern::scalar::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, acc);
    }
    static void vadd(size_t n, const double* a, const double* b, double* o) { kern::scalar::vadd(n, a, b, o); }
    static void vsub(size_t n, const double* a, const double* b, double* o) { kern::scalar::vsub(n, a, b, o); }
    static void vmul(size_t n, const double* a, const double* b, double* o) { kern::scalar::vmul(n, a, b, o); }
    static void vscale(size_t n, const double* a, double s, double* o) { kern::scalar::vscale(n, a, s, o); }
    static void vadd_scalar(size_t n, const double* a, double s, double* o) { kern::scalar::vadd_scalar(n, a, s, o); }
    static void vaxpy(size_t n, double al, const double* x, double* y) { kern::scalar::vaxpy(n, al, x, y); }
    static void vmul_acc(size_t n, const double* a, const double* b, double* o) { kern::scalar::vmul_acc(n, a, b, o); }
    static void silu_fwd(size_t n, const double* x, double* y) { kern::scalar::silu_fwd(n, x, y); }
    static void silu_bwd(size_t n, const double* x, const double* dy, double* dx) { kern::scalar::silu_bwd(n, x, dy, dx); }
    static void gelu_fwd(size_t n, const double* x, double* y) { kern::scalar::gelu_fwd(n, x, y); }
    static void gelu_bwd(size_t n, const double* x, const double* dy, double* dx) { kern::scalar::gelu_bwd(n, x, dy, dx); }
    static void tanh_fwd(size_t n, const double* x, double* y) { kern::scalar::tanh_fwd(n, x, y); }
    static void tanh_bwd(size_t n, const double* y, const double* dy, double* dx) { kern::scalar::tanh_bwd(n, y, dy, dx); }
    static void exp_fwd(size_t n, const double* x, double* y) { kern::scalar::exp_fwd(n, x, y); }
    static void exp_bwd(size_t n, const double* y, const double* dy, double* dx) { kern::scalar::exp_bwd(n, y, dy, dx); }
    static void softmax_rows(size_t r, size_t c, const double* x, double* y) { kern::scalar::softmax_rows(r, c, x, y); }
    static void softmax_bwd_rows(size_t r, size_t c, const double* y, const double* dy, double* dx) {
        kern::scalar::softmax_bwd_rows(r, c, y, dy, dx);
    }
    static void layernorm_fwd(size_t r, size_t c, const double* x, double eps, double* y, double* mu,
                              double* rs) {
        kern::scalar::layernorm_fwd(r, c, x, eps, y, mu, rs);
    }
    static void layernorm_bwd(size_t r, size_t c, const double* x, const double* mu, const double* rs,
                              const double* dy, double* dx) {
        kern::scalar::layernorm_bwd(r, c, x, mu, rs, dy, dx);
    }
    static double reduce_sum(size_t n, const double* x) { return kern::scalar::reduce_sum(n, x); }
    static double reduce_sqdiff(size_t n, const double* a, const double* b) { return kern::scalar::reduce_sqdiff(n, a, b); }
    static size_t count_nonfinite(size_t n, const double* x) { return kern::scalar::count_nonfinite(n, x); }
};

// Shared post-op step: finite check, then backward recording if a tape is
// active and some input carries gradient.
template <class T, class Back>
void finish(const char* op, TensorT<T>& out, std::initializer_list<const TensorT<T>*> inputs,
            Back&& back) {
    check_finite(op, out);
    TapeT<T>* tape = TapeT<T>::current();
    if (!tape) return;
    bool any = false;
    for (const TensorT<T>* in : inputs)
        if (in->defined() && in->requires_grad()) any = true;
    if (!any) return;
    out.set_requires_grad(true);
    tape->record(std::forward<Back>(back));
}

template <class T>
const T* out_grad(const std::shared_ptr<detail::Node<T>>& n) {
    return n->grad.empty() ? nullptr : n->grad.data();
}

}  // namespace td::detail
