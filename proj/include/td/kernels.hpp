#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace td::kern {

// Data-parallel inner loops behind the tensor primitives.
//
// The scalar templates in td::kern::scalar are the reference semantics and
// serve both float and double. For float there is an additional AVX2+FMA
// implementation set; Table holds function pointers and the active set is
// picked once at startup from CPUID (overridable with TD_KERNELS=scalar|avx2).
// SIMD and scalar variants are equivalence-tested against each other; they
// may differ in rounding (FMA, reduction order), never in semantics.

enum class Backend { scalar, avx2 };

struct Table {
    // C[M x N] (+)= op(A) * op(B); row-major, explicit leading dimensions.
    void (*gemm_nn)(size_t m, size_t n, size_t k, const float* a, size_t lda,
                    const float* b, size_t ldb, float* c, size_t ldc, bool accumulate);
    void (*gemm_nt)(size_t m, size_t n, size_t k, const float* a, size_t lda,
                    const float* b, size_t ldb, float* c, size_t ldc, bool accumulate);
    void (*gemm_tn)(size_t m, size_t n, size_t k, const float* a, size_t lda,
                    const float* b, size_t ldb, float* c, size_t ldc, bool accumulate);

    void (*vadd)(size_t n, const float* a, const float* b, float* out);
    void (*vsub)(size_t n, const float* a, const float* b, float* out);
    void (*vmul)(size_t n, const float* a, const float* b, float* out);
    void (*vscale)(size_t n, const float* a, float s, float* out);
    void (*vadd_scalar)(size_t n, const float* a, float s, float* out);
    // y += alpha * x
    void (*vaxpy)(size_t n, float alpha, const float* x, float* y);
    // out += a * b
    void (*vmul_acc)(size_t n, const float* a, const float* b, float* out);

    void (*silu_fwd)(size_t n, const float* x, float* y);
    void (*silu_bwd)(size_t n, const float* x, const float* dy, float* dx);
    void (*gelu_fwd)(size_t n, const float* x, float* y);
    void (*gelu_bwd)(size_t n, const float* x, const float* dy, float* dx);
    void (*tanh_fwd)(size_t n, const float* x, float* y);
    void (*tanh_bwd)(size_t n, const float* y, const float* dy, float* dx);
    void (*exp_fwd)(size_t n, const float* x, float* y);
    void (*exp_bwd)(size_t n, const float* y, const float* dy, float* dx);

    void (*softmax_rows)(size_t rows, size_t cols, const float* x, float* y);
    void (*softmax_bwd_rows)(size_t rows, size_t cols, const float* y, const float* dy, float* dx);
    void (*layernorm_fwd)(size_t rows, size_t cols, const float* x, float eps,
                          float* y, float* mean, float* rstd);
    void (*layernorm_bwd)(size_t rows, size_t cols, const float* x, const float* mean,
                          const float* rstd, const float* dy, float* dx);

    float (*reduce_sum)(size_t n, const float* x);
    float (*reduce_sqdiff)(size_t n, const float* a, const float* b);
    size_t (*count_nonfinite)(size_t n, const float* x);

    void (*adam_update)(size_t n, float* p, const float* g, float* m, float* v,
                        float lr, float beta1, float beta2, float eps,
                        float bias_corr1, float bias_corr2);

    // Direct convolution fast paths (the im2col route stays as the general
    // implementation and the double-precision reference).
    //
    // 3x3 stride-1 pad-1: one INTERIOR output row (rows oy-1..oy+1 all valid),
    // accumulating over `channels` planes of width w (row stride = w).
    // weights: 9 per channel at w_stride apart, row-major (ky, kx).
    void (*conv3x3_row)(size_t channels, size_t w, const float* x_top, size_t chan_stride,
                        const float* weights, size_t w_stride, float* out_row);
    // dw9 += full-plane correlation (pad 1) of one x plane with one dout plane.
    void (*conv3x3_dw_plane)(size_t h, size_t w, const float* x, const float* dout, float* dw9);

};

// Active kernel set (selected on first use).
const Table& table();
Backend active_backend();
bool cpu_has_avx2_fma();
// Test hook: force a backend; throws if unavailable on this CPU.
void force_backend(Backend b);

const Table& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const Table& avx2_table();
#endif

// ---------------------------------------------------------------------------
// Scalar reference kernels. Ground truth for equivalence tests; also the
// implementation used by the 64-bit (gradient-check) tensor path.
// ---------------------------------------------------------------------------
namespace scalar {

template <class T>
void gemm_nn(size_t m, size_t n, size_t k, const T* a, size_t lda, const T* b, size_t ldb,
             T* c, size_t ldc, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        if (!accumulate)
            for (size_t j = 0; j < n; ++j) crow[j] = T(0);
        for (size_t kk = 0; kk < k; ++kk) {
            T av = a[i * lda + kk];
            const T* brow = b + kk * ldb;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void gemm_nt(size_t m, size_t n, size_t k, const T* a, size_t lda, const T* b, size_t ldb,
             T* c, size_t ldc, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            T acc = T(0);
            const T* arow = a + i * lda;
            const T* brow = b + j * ldb;
            for (size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            if (accumulate)
                c[i * ldc + j] += acc;
            else
                c[i * ldc + j] = acc;
        }
    }
}

template <class T>
void gemm_tn(size_t m, size_t n, size_t k, const T* a, size_t lda, const T* b, size_t ldb,
             T* c, size_t ldc, bool accumulate) {
    if (!accumulate)
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) c[i * ldc + j] = T(0);
    for (size_t kk = 0; kk < k; ++kk) {
        const T* arow = a + kk * lda;
        const T* brow = b + kk * ldb;
        for (size_t i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + i * ldc;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
void vadd(size_t n, const T* a, const T* b, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
template <class T>
void vsub(size_t n, const T* a, const T* b, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
template <class T>
void vmul(size_t n, const T* a, const T* b, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
template <class T>
void vscale(size_t n, const T* a, T s, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
template <class T>
void vadd_scalar(size_t n, const T* a, T s, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + s;
}
template <class T>
void vaxpy(size_t n, T alpha, const T* x, T* y) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <class T>
void vmul_acc(size_t n, const T* a, const T* b, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

template <class T>
void silu_fwd(size_t n, const T* x, T* y) {
    for (size_t i = 0; i < n; ++i) {
        T s = T(1) / (T(1) + std::exp(-x[i]));
        y[i] = x[i] * s;
    }
}
// dx += dy * d/dx silu(x)
template <class T>
void silu_bwd(size_t n, const T* x, const T* dy, T* dx) {
    for (size_t i = 0; i < n; ++i) {
        T s = T(1) / (T(1) + std::exp(-x[i]));
        dx[i] += dy[i] * s * (T(1) + x[i] * (T(1) - s));
    }
}

// gelu uses the tanh approximation form as the definition:
// 0.5 * x * (1 + tanh(c1 * (x + c2 * x^3)))
inline constexpr double kGeluC1 = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC2 = 0.044715;

template <class T>
void gelu_fwd(size_t n, const T* x, T* y) {
    const T c1 = T(kGeluC1), c2 = T(kGeluC2);
    for (size_t i = 0; i < n; ++i) {
        T xi = x[i];
        T t = std::tanh(c1 * (xi + c2 * xi * xi * xi));
        y[i] = T(0.5) * xi * (T(1) + t);
    }
}
template <class T>
void gelu_bwd(size_t n, const T* x, const T* dy, T* dx) {
    const T c1 = T(kGeluC1), c2 = T(kGeluC2);
    for (size_t i = 0; i < n; ++i) {
        T xi = x[i];
        T u = c1 * (xi + c2 * xi * xi * xi);
        T t = std::tanh(u);
        T du = c1 * (T(1) + T(3) * c2 * xi * xi);
        T g = T(0.5) * (T(1) + t) + T(0.5) * xi * (T(1) - t * t) * du;
        dx[i] += dy[i] * g;
    }
}

template <class T>
void tanh_fwd(size_t n, const T* x, T* y) {
    for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}
// Backward in terms of the saved output y.
template <class T>
void tanh_bwd(size_t n, const T* y, const T* dy, T* dx) {
    for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
}

template <class T>
void exp_fwd(size_t n, const T* x, T* y) {
    for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}
template <class T>
void exp_bwd(size_t n, const T* y, const T* dy, T* dx) {
    for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i];
}

template <class T>
void softmax_rows(size_t rows, size_t cols, const T* x, T* y) {
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T mx = xr[0];
        for (size_t j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
        T sum = T(0);
        for (size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        T inv = T(1) / sum;
        for (size_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}
// dx += y * (dy - dot(y, dy)) per row
template <class T>
void softmax_bwd_rows(size_t rows, size_t cols, const T* y, const T* dy, T* dx) {
    for (size_t r = 0; r < rows; ++r) {
        const T* yr = y + r * cols;
        const T* dyr = dy + r * cols;
        T* dxr = dx + r * cols;
        T dot = T(0);
        for (size_t j = 0; j < cols; ++j) dot += yr[j] * dyr[j];
        for (size_t j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
}

template <class T>
void layernorm_fwd(size_t rows, size_t cols, const T* x, T eps, T* y, T* mean, T* rstd) {
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T mu = T(0);
        for (size_t j = 0; j < cols; ++j) mu += xr[j];
        mu /= T(cols);
        T var = T(0);
        for (size_t j = 0; j < cols; ++j) {
            T d = xr[j] - mu;
            var += d * d;
        }
        var /= T(cols);
        T rs = T(1) / std::sqrt(var + eps);
        for (size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs;
        mean[r] = mu;
        rstd[r] = rs;
    }
}
// No-affine layer norm backward:
// dx = rstd * (dy - mean(dy) - xhat * mean(dy * xhat))
template <class T>
void layernorm_bwd(size_t rows, size_t cols, const T* x, const T* mean, const T* rstd,
                   const T* dy, T* dx) {
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        const T* dyr = dy + r * cols;
        T* dxr = dx + r * cols;
        T mu = mean[r], rs = rstd[r];
        T s1 = T(0), s2 = T(0);
        for (size_t j = 0; j < cols; ++j) {
            T xhat = (xr[j] - mu) * rs;
            s1 += dyr[j];
            s2 += dyr[j] * xhat;
        }
        s1 /= T(cols);
        s2 /= T(cols);
        for (size_t j = 0; j < cols; ++j) {
            T xhat = (xr[j] - mu) * rs;
            dxr[j] += rs * (dyr[j] - s1 - xhat * s2);
        }
    }
}

template <class T>
T reduce_sum(size_t n, const T* x) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}
template <class T>
T reduce_sqdiff(size_t n, const T* a, const T* b) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        T d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}
template <class T>
size_t count_nonfinite(size_t n, const T* x) {
    size_t c = 0;
    for (size_t i = 0; i < n; ++i) c += std::isfinite(x[i]) ? 0 : 1;
    return c;
}

template <class T>
void adam_update(size_t n, T* p, const T* g, T* m, T* v, T lr, T beta1, T beta2, T eps,
                 T bias_corr1, T bias_corr2) {
    for (size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        T mhat = m[i] / bias_corr1;
        T vhat = v[i] / bias_corr2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

template <class T>
void conv3x3_row(size_t channels, size_t w, const T* x_top, size_t chan_stride, const T* weights,
                 size_t w_stride, T* out_row) {
    for (size_t c = 0; c < channels; ++c) {
        const T* r0 = x_top + c * chan_stride;
        const T* r1 = r0 + w;
        const T* r2 = r1 + w;
        const T* k = weights + c * w_stride;
        // left edge (kx=0 tap falls off)
        out_row[0] += k[1] * r0[0] + k[2] * r0[1] + k[4] * r1[0] + k[5] * r1[1] + k[7] * r2[0] +
                      k[8] * r2[1];
        for (size_t j = 1; j + 1 < w; ++j)
            out_row[j] += k[0] * r0[j - 1] + k[1] * r0[j] + k[2] * r0[j + 1] + k[3] * r1[j - 1] +
                          k[4] * r1[j] + k[5] * r1[j + 1] + k[6] * r2[j - 1] + k[7] * r2[j] +
                          k[8] * r2[j + 1];
        if (w > 1)  // right edge (kx=2 tap falls off)
            out_row[w - 1] += k[0] * r0[w - 2] + k[1] * r0[w - 1] + k[3] * r1[w - 2] +
                              k[4] * r1[w - 1] + k[6] * r2[w - 2] + k[7] * r2[w - 1];
    }
}

template <class T>
void conv3x3_dw_plane(size_t h, size_t w, const T* x, const T* dout, T* dw9) {
    for (size_t ky = 0; ky < 3; ++ky) {
        for (size_t kx = 0; kx < 3; ++kx) {
            T acc = T(0);
            size_t oy0 = ky == 0 ? 1 : 0;
            size_t oy1 = ky == 2 ? h - 1 : h;
            size_t ox0 = kx == 0 ? 1 : 0;
            size_t ox1 = kx == 2 ? w - 1 : w;
            for (size_t oy = oy0; oy < oy1; ++oy) {
                const T* drow = dout + oy * w;
                const T* xrow = x + (oy + ky - 1) * w + kx - 1;
                for (size_t ox = ox0; ox < ox1; ++ox) acc += drow[ox] * xrow[ox];
            }
            dw9[ky * 3 + kx] += acc;
        }
    }
}

}  // namespace scalar
}  // namespace td::kern
