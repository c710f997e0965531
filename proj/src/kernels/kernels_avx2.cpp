// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; nothing here may run unless the dispatcher confirmed
// CPU support. Semantics match td::kern::scalar; rounding may differ
// (FMA contraction, 8-lane reduction order), which the equivalence
// tests account for with relative tolerances.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstdint>
#include <cstring>

#include "td/kernels.hpp"

namespace td::kern {
namespace avx2 {
namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
}

inline float hmax(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_max_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 m = _mm_max_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, m);
    m = _mm_max_ss(m, shuf);
    return _mm_cvtss_f32(m);
}

// exp via 2^k * e^r decomposition, degree-6 polynomial on the reduced range.
inline __m256 exp256(__m256 x) {
    const __m256 hi_cap = _mm256_set1_ps(88.0f);
    const __m256 lo_cap = _mm256_set1_ps(-87.0f);
    x = _mm256_min_ps(_mm256_max_ps(x, lo_cap), hi_cap);

    const __m256 log2e = _mm256_set1_ps(1.442695040888963f);
    const __m256 ln2_hi = _mm256_set1_ps(0.693359375f);
    const __m256 ln2_lo = _mm256_set1_ps(-2.12194440e-4f);

    __m256 kf = _mm256_round_ps(_mm256_mul_ps(x, log2e),
                                _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256 r = _mm256_fnmadd_ps(kf, ln2_hi, x);
    r = _mm256_fnmadd_ps(kf, ln2_lo, r);

    const __m256 c6 = _mm256_set1_ps(1.0f / 720.0f);
    const __m256 c5 = _mm256_set1_ps(1.0f / 120.0f);
    const __m256 c4 = _mm256_set1_ps(1.0f / 24.0f);
    const __m256 c3 = _mm256_set1_ps(1.0f / 6.0f);
    const __m256 c2 = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);

    __m256 p = _mm256_fmadd_ps(c6, r, c5);
    p = _mm256_fmadd_ps(p, r, c4);
    p = _mm256_fmadd_ps(p, r, c3);
    p = _mm256_fmadd_ps(p, r, c2);
    p = _mm256_fmadd_ps(p, r, one);
    p = _mm256_fmadd_ps(p, r, one);

    __m256i k = _mm256_cvtps_epi32(kf);
    k = _mm256_add_epi32(k, _mm256_set1_epi32(127));
    k = _mm256_slli_epi32(k, 23);
    return _mm256_mul_ps(p, _mm256_castsi256_ps(k));
}

inline __m256 sigmoid256(__m256 x) {
    const __m256 one = _mm256_set1_ps(1.0f);
    __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), x));
    return _mm256_div_ps(one, _mm256_add_ps(one, e));
}

// tanh(x) = 1 - 2 / (exp(2x) + 1)
inline __m256 tanh256(__m256 x) {
    const __m256 one = _mm256_set1_ps(1.0f);
    const __m256 two = _mm256_set1_ps(2.0f);
    __m256 e = exp256(_mm256_mul_ps(two, x));
    return _mm256_sub_ps(one, _mm256_div_ps(two, _mm256_add_ps(e, one)));
}

}  // namespace

// ---------------------------------------------------------------------------
// GEMM
// ---------------------------------------------------------------------------

namespace {

inline void zero_block(size_t m, size_t n, float* c, size_t ldc) {
    for (size_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, n * sizeof(float));
}

// Shared 4x16 register-tile core for NN and TN. `AIndex` maps (row, k) to the
// A element feeding C's row.
template <bool kTransA>
inline void gemm_broadcast(size_t m, size_t n, size_t k, const float* a, size_t lda,
                           const float* b, size_t ldb, float* c, size_t ldc,
                           bool accumulate) {
    if (!accumulate) zero_block(m, n, c, ldc);
    auto a_at = [&](size_t row, size_t kk) -> float {
        return kTransA ? a[kk * lda + row] : a[row * lda + kk];
    };

    size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        size_t j = 0;
        for (; j + 16 <= n; j += 16) {
            __m256 c00 = _mm256_loadu_ps(c + (i + 0) * ldc + j);
            __m256 c01 = _mm256_loadu_ps(c + (i + 0) * ldc + j + 8);
            __m256 c10 = _mm256_loadu_ps(c + (i + 1) * ldc + j);
            __m256 c11 = _mm256_loadu_ps(c + (i + 1) * ldc + j + 8);
            __m256 c20 = _mm256_loadu_ps(c + (i + 2) * ldc + j);
            __m256 c21 = _mm256_loadu_ps(c + (i + 2) * ldc + j + 8);
            __m256 c30 = _mm256_loadu_ps(c + (i + 3) * ldc + j);
            __m256 c31 = _mm256_loadu_ps(c + (i + 3) * ldc + j + 8);
            for (size_t kk = 0; kk < k; ++kk) {
                const float* brow = b + kk * ldb + j;
                __m256 b0 = _mm256_loadu_ps(brow);
                __m256 b1 = _mm256_loadu_ps(brow + 8);
                __m256 a0 = _mm256_set1_ps(a_at(i + 0, kk));
                __m256 a1 = _mm256_set1_ps(a_at(i + 1, kk));
                __m256 a2 = _mm256_set1_ps(a_at(i + 2, kk));
                __m256 a3 = _mm256_set1_ps(a_at(i + 3, kk));
                c00 = _mm256_fmadd_ps(a0, b0, c00);
                c01 = _mm256_fmadd_ps(a0, b1, c01);
                c10 = _mm256_fmadd_ps(a1, b0, c10);
                c11 = _mm256_fmadd_ps(a1, b1, c11);
                c20 = _mm256_fmadd_ps(a2, b0, c20);
                c21 = _mm256_fmadd_ps(a2, b1, c21);
                c30 = _mm256_fmadd_ps(a3, b0, c30);
                c31 = _mm256_fmadd_ps(a3, b1, c31);
            }
            _mm256_storeu_ps(c + (i + 0) * ldc + j, c00);
            _mm256_storeu_ps(c + (i + 0) * ldc + j + 8, c01);
            _mm256_storeu_ps(c + (i + 1) * ldc + j, c10);
            _mm256_storeu_ps(c + (i + 1) * ldc + j + 8, c11);
            _mm256_storeu_ps(c + (i + 2) * ldc + j, c20);
            _mm256_storeu_ps(c + (i + 2) * ldc + j + 8, c21);
            _mm256_storeu_ps(c + (i + 3) * ldc + j, c30);
            _mm256_storeu_ps(c + (i + 3) * ldc + j + 8, c31);
        }
        for (; j + 8 <= n; j += 8) {
            __m256 c0 = _mm256_loadu_ps(c + (i + 0) * ldc + j);
            __m256 c1 = _mm256_loadu_ps(c + (i + 1) * ldc + j);
            __m256 c2 = _mm256_loadu_ps(c + (i + 2) * ldc + j);
            __m256 c3 = _mm256_loadu_ps(c + (i + 3) * ldc + j);
            for (size_t kk = 0; kk < k; ++kk) {
                __m256 b0 = _mm256_loadu_ps(b + kk * ldb + j);
                c0 = _mm256_fmadd_ps(_mm256_set1_ps(a_at(i + 0, kk)), b0, c0);
                c1 = _mm256_fmadd_ps(_mm256_set1_ps(a_at(i + 1, kk)), b0, c1);
                c2 = _mm256_fmadd_ps(_mm256_set1_ps(a_at(i + 2, kk)), b0, c2);
                c3 = _mm256_fmadd_ps(_mm256_set1_ps(a_at(i + 3, kk)), b0, c3);
            }
            _mm256_storeu_ps(c + (i + 0) * ldc + j, c0);
            _mm256_storeu_ps(c + (i + 1) * ldc + j, c1);
            _mm256_storeu_ps(c + (i + 2) * ldc + j, c2);
            _mm256_storeu_ps(c + (i + 3) * ldc + j, c3);
        }
        for (; j < n; ++j) {
            for (size_t r = 0; r < 4; ++r) {
                float acc = c[(i + r) * ldc + j];
                for (size_t kk = 0; kk < k; ++kk) acc += a_at(i + r, kk) * b[kk * ldb + j];
                c[(i + r) * ldc + j] = acc;
            }
        }
    }
    for (; i < m; ++i) {
        // Remaining 1-3 rows: 32-wide register tiles so C is touched once.
        size_t j = 0;
        for (; j + 32 <= n; j += 32) {
            __m256 c0 = _mm256_loadu_ps(c + i * ldc + j);
            __m256 c1 = _mm256_loadu_ps(c + i * ldc + j + 8);
            __m256 c2 = _mm256_loadu_ps(c + i * ldc + j + 16);
            __m256 c3 = _mm256_loadu_ps(c + i * ldc + j + 24);
            for (size_t kk = 0; kk < k; ++kk) {
                const float* brow = b + kk * ldb + j;
                __m256 av = _mm256_set1_ps(a_at(i, kk));
                c0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow), c0);
                c1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + 8), c1);
                c2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + 16), c2);
                c3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + 24), c3);
            }
            _mm256_storeu_ps(c + i * ldc + j, c0);
            _mm256_storeu_ps(c + i * ldc + j + 8, c1);
            _mm256_storeu_ps(c + i * ldc + j + 16, c2);
            _mm256_storeu_ps(c + i * ldc + j + 24, c3);
        }
        for (; j + 8 <= n; j += 8) {
            __m256 c0 = _mm256_loadu_ps(c + i * ldc + j);
            for (size_t kk = 0; kk < k; ++kk) {
                __m256 b0 = _mm256_loadu_ps(b + kk * ldb + j);
                c0 = _mm256_fmadd_ps(_mm256_set1_ps(a_at(i, kk)), b0, c0);
            }
            _mm256_storeu_ps(c + i * ldc + j, c0);
        }
        for (; j < n; ++j) {
            float acc = c[i * ldc + j];
            for (size_t kk = 0; kk < k; ++kk) acc += a_at(i, kk) * b[kk * ldb + j];
            c[i * ldc + j] = acc;
        }
    }
}

}  // namespace

void gemm_nn(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b,
             size_t ldb, float* c, size_t ldc, bool accumulate) {
    gemm_broadcast<false>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_tn(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b,
             size_t ldb, float* c, size_t ldc, bool accumulate) {
    gemm_broadcast<true>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

// C[i,j] (+)= dot(A row i, B row j): both operands contiguous over k.
void gemm_nt(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b,
             size_t ldb, float* c, size_t ldc, bool accumulate) {
    size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        size_t j = 0;
        for (; j + 2 <= n; j += 2) {
            __m256 acc[4][2] = {};
            size_t kk = 0;
            for (; kk + 8 <= k; kk += 8) {
                __m256 b0 = _mm256_loadu_ps(b + (j + 0) * ldb + kk);
                __m256 b1 = _mm256_loadu_ps(b + (j + 1) * ldb + kk);
                for (size_t r = 0; r < 4; ++r) {
                    __m256 av = _mm256_loadu_ps(a + (i + r) * lda + kk);
                    acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
                    acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
                }
            }
            for (size_t r = 0; r < 4; ++r) {
                float s0 = hsum(acc[r][0]);
                float s1 = hsum(acc[r][1]);
                for (size_t kt = kk; kt < k; ++kt) {
                    s0 += a[(i + r) * lda + kt] * b[(j + 0) * ldb + kt];
                    s1 += a[(i + r) * lda + kt] * b[(j + 1) * ldb + kt];
                }
                float* c0 = c + (i + r) * ldc + j;
                if (accumulate) {
                    c0[0] += s0;
                    c0[1] += s1;
                } else {
                    c0[0] = s0;
                    c0[1] = s1;
                }
            }
        }
        for (; j < n; ++j) {
            for (size_t r = 0; r < 4; ++r) {
                __m256 acc = _mm256_setzero_ps();
                size_t kk = 0;
                for (; kk + 8 <= k; kk += 8)
                    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + (i + r) * lda + kk),
                                          _mm256_loadu_ps(b + j * ldb + kk), acc);
                float s = hsum(acc);
                for (; kk < k; ++kk) s += a[(i + r) * lda + kk] * b[j * ldb + kk];
                if (accumulate)
                    c[(i + r) * ldc + j] += s;
                else
                    c[(i + r) * ldc + j] = s;
            }
        }
    }
    for (; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            __m256 acc = _mm256_setzero_ps();
            size_t kk = 0;
            for (; kk + 8 <= k; kk += 8)
                acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i * lda + kk),
                                      _mm256_loadu_ps(b + j * ldb + kk), acc);
            float s = hsum(acc);
            for (; kk < k; ++kk) s += a[i * lda + kk] * b[j * ldb + kk];
            if (accumulate)
                c[i * ldc + j] += s;
            else
                c[i * ldc + j] = s;
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

#define TD_EW_LOOP(expr_vec, expr_scalar)                    \
    size_t i = 0;                                            \
    for (; i + 8 <= n; i += 8) { expr_vec; }                 \
    for (; i < n; ++i) { expr_scalar; }

void vadd(size_t n, const float* a, const float* b, float* out) {
    TD_EW_LOOP(_mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i),
                                                       _mm256_loadu_ps(b + i))),
               out[i] = a[i] + b[i]);
}
void vsub(size_t n, const float* a, const float* b, float* out) {
    TD_EW_LOOP(_mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i),
                                                       _mm256_loadu_ps(b + i))),
               out[i] = a[i] - b[i]);
}
void vmul(size_t n, const float* a, const float* b, float* out) {
    TD_EW_LOOP(_mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i),
                                                       _mm256_loadu_ps(b + i))),
               out[i] = a[i] * b[i]);
}
void vscale(size_t n, const float* a, float s, float* out) {
    __m256 sv = _mm256_set1_ps(s);
    TD_EW_LOOP(_mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), sv)),
               out[i] = a[i] * s);
}
void vadd_scalar(size_t n, const float* a, float s, float* out) {
    __m256 sv = _mm256_set1_ps(s);
    TD_EW_LOOP(_mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), sv)),
               out[i] = a[i] + s);
}
void vaxpy(size_t n, float alpha, const float* x, float* y) {
    __m256 av = _mm256_set1_ps(alpha);
    TD_EW_LOOP(_mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i),
                                                       _mm256_loadu_ps(y + i))),
               y[i] += alpha * x[i]);
}
void vmul_acc(size_t n, const float* a, const float* b, float* out) {
    TD_EW_LOOP(_mm256_storeu_ps(out + i,
                                _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i),
                                                _mm256_loadu_ps(out + i))),
               out[i] += a[i] * b[i]);
}

void silu_fwd(size_t n, const float* x, float* y) {
    TD_EW_LOOP(
        {
            __m256 xv = _mm256_loadu_ps(x + i);
            _mm256_storeu_ps(y + i, _mm256_mul_ps(xv, sigmoid256(xv)));
        },
        {
            float s = 1.0f / (1.0f + std::exp(-x[i]));
            y[i] = x[i] * s;
        });
}
void silu_bwd(size_t n, const float* x, const float* dy, float* dx) {
    const __m256 one = _mm256_set1_ps(1.0f);
    TD_EW_LOOP(
        {
            __m256 xv = _mm256_loadu_ps(x + i);
            __m256 s = sigmoid256(xv);
            __m256 g = _mm256_mul_ps(s, _mm256_fmadd_ps(xv, _mm256_sub_ps(one, s), one));
            _mm256_storeu_ps(dx + i,
                             _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), g, _mm256_loadu_ps(dx + i)));
        },
        {
            float s = 1.0f / (1.0f + std::exp(-x[i]));
            dx[i] += dy[i] * s * (1.0f + x[i] * (1.0f - s));
        });
}

void gelu_fwd(size_t n, const float* x, float* y) {
    const __m256 c1 = _mm256_set1_ps(static_cast<float>(scalar::kGeluC1));
    const __m256 c2 = _mm256_set1_ps(static_cast<float>(scalar::kGeluC2));
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);
    TD_EW_LOOP(
        {
            __m256 xv = _mm256_loadu_ps(x + i);
            __m256 x3 = _mm256_mul_ps(_mm256_mul_ps(xv, xv), xv);
            __m256 u = _mm256_mul_ps(c1, _mm256_fmadd_ps(c2, x3, xv));
            __m256 t = tanh256(u);
            _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_mul_ps(half, xv), _mm256_add_ps(one, t)));
        },
        {
            float xi = x[i];
            float t = std::tanh(static_cast<float>(scalar::kGeluC1) *
                                (xi + static_cast<float>(scalar::kGeluC2) * xi * xi * xi));
            y[i] = 0.5f * xi * (1.0f + t);
        });
}
void gelu_bwd(size_t n, const float* x, const float* dy, float* dx) {
    const float c1 = static_cast<float>(scalar::kGeluC1);
    const float c2 = static_cast<float>(scalar::kGeluC2);
    const __m256 c1v = _mm256_set1_ps(c1);
    const __m256 c2v = _mm256_set1_ps(c2);
    const __m256 three_c2 = _mm256_set1_ps(3.0f * c2);
    const __m256 half = _mm256_set1_ps(0.5f);
    const __m256 one = _mm256_set1_ps(1.0f);
    TD_EW_LOOP(
        {
            __m256 xv = _mm256_loadu_ps(x + i);
            __m256 x2 = _mm256_mul_ps(xv, xv);
            __m256 u = _mm256_mul_ps(c1v, _mm256_fmadd_ps(c2v, _mm256_mul_ps(x2, xv), xv));
            __m256 t = tanh256(u);
            __m256 du = _mm256_mul_ps(c1v, _mm256_fmadd_ps(three_c2, x2, one));
            __m256 sech2 = _mm256_fnmadd_ps(t, t, one);
            __m256 g = _mm256_fmadd_ps(_mm256_mul_ps(half, xv), _mm256_mul_ps(sech2, du),
                                       _mm256_mul_ps(half, _mm256_add_ps(one, t)));
            _mm256_storeu_ps(dx + i,
                             _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), g, _mm256_loadu_ps(dx + i)));
        },
        {
            float xi = x[i];
            float u = c1 * (xi + c2 * xi * xi * xi);
            float t = std::tanh(u);
            float du = c1 * (1.0f + 3.0f * c2 * xi * xi);
            dx[i] += dy[i] * (0.5f * (1.0f + t) + 0.5f * xi * (1.0f - t * t) * du);
        });
}

void tanh_fwd(size_t n, const float* x, float* y) {
    TD_EW_LOOP(_mm256_storeu_ps(y + i, tanh256(_mm256_loadu_ps(x + i))), y[i] = std::tanh(x[i]));
}
void tanh_bwd(size_t n, const float* y, const float* dy, float* dx) {
    const __m256 one = _mm256_set1_ps(1.0f);
    TD_EW_LOOP(
        {
            __m256 yv = _mm256_loadu_ps(y + i);
            __m256 g = _mm256_fnmadd_ps(yv, yv, one);
            _mm256_storeu_ps(dx + i,
                             _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), g, _mm256_loadu_ps(dx + i)));
        },
        dx[i] += dy[i] * (1.0f - y[i] * y[i]));
}

void exp_fwd(size_t n, const float* x, float* y) {
    TD_EW_LOOP(_mm256_storeu_ps(y + i, exp256(_mm256_loadu_ps(x + i))), y[i] = std::exp(x[i]));
}
void exp_bwd(size_t n, const float* y, const float* dy, float* dx) {
    TD_EW_LOOP(_mm256_storeu_ps(dx + i,
                                _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), _mm256_loadu_ps(y + i),
                                                _mm256_loadu_ps(dx + i))),
               dx[i] += dy[i] * y[i]);
}

// ---------------------------------------------------------------------------
// Rows
// ---------------------------------------------------------------------------

void softmax_rows(size_t rows, size_t cols, const float* x, float* y) {
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        float* yr = y + r * cols;
        float mx = xr[0];
        size_t j = 0;
        if (cols >= 8) {
            __m256 mv = _mm256_loadu_ps(xr);
            for (j = 8; j + 8 <= cols; j += 8) mv = _mm256_max_ps(mv, _mm256_loadu_ps(xr + j));
            mx = hmax(mv);
        }
        for (; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;

        __m256 mxv = _mm256_set1_ps(mx);
        __m256 sumv = _mm256_setzero_ps();
        float sum = 0.0f;
        for (j = 0; j + 8 <= cols; j += 8) {
            __m256 e = exp256(_mm256_sub_ps(_mm256_loadu_ps(xr + j), mxv));
            _mm256_storeu_ps(yr + j, e);
            sumv = _mm256_add_ps(sumv, e);
        }
        sum = hsum(sumv);
        for (; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        float inv = 1.0f / sum;
        vscale(cols, yr, inv, yr);
    }
}

void softmax_bwd_rows(size_t rows, size_t cols, const float* y, const float* dy, float* dx) {
    for (size_t r = 0; r < rows; ++r) {
        const float* yr = y + r * cols;
        const float* dyr = dy + r * cols;
        float* dxr = dx + r * cols;
        __m256 dotv = _mm256_setzero_ps();
        size_t j = 0;
        for (; j + 8 <= cols; j += 8)
            dotv = _mm256_fmadd_ps(_mm256_loadu_ps(yr + j), _mm256_loadu_ps(dyr + j), dotv);
        float dot = hsum(dotv);
        for (; j < cols; ++j) dot += yr[j] * dyr[j];
        __m256 dv = _mm256_set1_ps(dot);
        for (j = 0; j + 8 <= cols; j += 8) {
            __m256 t = _mm256_sub_ps(_mm256_loadu_ps(dyr + j), dv);
            _mm256_storeu_ps(dxr + j,
                             _mm256_fmadd_ps(_mm256_loadu_ps(yr + j), t, _mm256_loadu_ps(dxr + j)));
        }
        for (; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
}

void layernorm_fwd(size_t rows, size_t cols, const float* x, float eps, float* y, float* mean,
                   float* rstd) {
    const float inv_cols = 1.0f / static_cast<float>(cols);
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        float* yr = y + r * cols;
        __m256 sv = _mm256_setzero_ps();
        size_t j = 0;
        for (; j + 8 <= cols; j += 8) sv = _mm256_add_ps(sv, _mm256_loadu_ps(xr + j));
        float mu = hsum(sv);
        for (; j < cols; ++j) mu += xr[j];
        mu *= inv_cols;

        __m256 muv = _mm256_set1_ps(mu);
        __m256 vv = _mm256_setzero_ps();
        float var = 0.0f;
        for (j = 0; j + 8 <= cols; j += 8) {
            __m256 d = _mm256_sub_ps(_mm256_loadu_ps(xr + j), muv);
            vv = _mm256_fmadd_ps(d, d, vv);
        }
        var = hsum(vv);
        for (; j < cols; ++j) {
            float d = xr[j] - mu;
            var += d * d;
        }
        var *= inv_cols;
        float rs = 1.0f / std::sqrt(var + eps);
        __m256 rsv = _mm256_set1_ps(rs);
        for (j = 0; j + 8 <= cols; j += 8)
            _mm256_storeu_ps(yr + j, _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + j), muv), rsv));
        for (; j < cols; ++j) yr[j] = (xr[j] - mu) * rs;
        mean[r] = mu;
        rstd[r] = rs;
    }
}

void layernorm_bwd(size_t rows, size_t cols, const float* x, const float* mean, const float* rstd,
                   const float* dy, float* dx) {
    const float inv_cols = 1.0f / static_cast<float>(cols);
    for (size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * cols;
        const float* dyr = dy + r * cols;
        float* dxr = dx + r * cols;
        float mu = mean[r], rs = rstd[r];
        __m256 muv = _mm256_set1_ps(mu);
        __m256 rsv = _mm256_set1_ps(rs);
        __m256 s1v = _mm256_setzero_ps(), s2v = _mm256_setzero_ps();
        size_t j = 0;
        for (; j + 8 <= cols; j += 8) {
            __m256 dyv = _mm256_loadu_ps(dyr + j);
            __m256 xhat = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + j), muv), rsv);
            s1v = _mm256_add_ps(s1v, dyv);
            s2v = _mm256_fmadd_ps(dyv, xhat, s2v);
        }
        float s1 = hsum(s1v), s2 = hsum(s2v);
        for (; j < cols; ++j) {
            float xhat = (xr[j] - mu) * rs;
            s1 += dyr[j];
            s2 += dyr[j] * xhat;
        }
        s1 *= inv_cols;
        s2 *= inv_cols;
        __m256 s1vv = _mm256_set1_ps(s1), s2vv = _mm256_set1_ps(s2);
        for (j = 0; j + 8 <= cols; j += 8) {
            __m256 xhat = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + j), muv), rsv);
            __m256 t = _mm256_sub_ps(_mm256_loadu_ps(dyr + j), s1vv);
            t = _mm256_fnmadd_ps(xhat, s2vv, t);
            _mm256_storeu_ps(dxr + j, _mm256_fmadd_ps(rsv, t, _mm256_loadu_ps(dxr + j)));
        }
        for (; j < cols; ++j) {
            float xhat = (xr[j] - mu) * rs;
            dxr[j] += rs * (dyr[j] - s1 - xhat * s2);
        }
    }
}

// ---------------------------------------------------------------------------
// Reductions and updates
// ---------------------------------------------------------------------------

float reduce_sum(size_t n, const float* x) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

float reduce_sqdiff(size_t n, const float* a, const float* b) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
        acc = _mm256_fmadd_ps(d, d, acc);
    }
    float s = hsum(acc);
    for (; i < n; ++i) {
        float d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

size_t count_nonfinite(size_t n, const float* x) {
    const __m256i expmask = _mm256_set1_epi32(0x7f800000);
    size_t count = 0;
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256i bits = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(x + i));
        __m256i masked = _mm256_and_si256(bits, expmask);
        __m256i bad = _mm256_cmpeq_epi32(masked, expmask);
        unsigned mask = static_cast<unsigned>(_mm256_movemask_ps(_mm256_castsi256_ps(bad)));
        count += static_cast<size_t>(__builtin_popcount(mask));
    }
    for (; i < n; ++i) count += std::isfinite(x[i]) ? 0 : 1;
    return count;
}

void adam_update(size_t n, float* p, const float* g, float* m, float* v, float lr, float beta1,
                 float beta2, float eps, float bias_corr1, float bias_corr2) {
    const __m256 b1 = _mm256_set1_ps(beta1);
    const __m256 b2 = _mm256_set1_ps(beta2);
    const __m256 ob1 = _mm256_set1_ps(1.0f - beta1);
    const __m256 ob2 = _mm256_set1_ps(1.0f - beta2);
    const __m256 lrv = _mm256_set1_ps(lr);
    const __m256 epsv = _mm256_set1_ps(eps);
    const __m256 ibc1 = _mm256_set1_ps(1.0f / bias_corr1);
    const __m256 ibc2 = _mm256_set1_ps(1.0f / bias_corr2);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 gv = _mm256_loadu_ps(g + i);
        __m256 mv = _mm256_fmadd_ps(ob1, gv, _mm256_mul_ps(b1, _mm256_loadu_ps(m + i)));
        __m256 vv = _mm256_fmadd_ps(ob2, _mm256_mul_ps(gv, gv),
                                    _mm256_mul_ps(b2, _mm256_loadu_ps(v + i)));
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        __m256 mhat = _mm256_mul_ps(mv, ibc1);
        __m256 vhat = _mm256_mul_ps(vv, ibc2);
        __m256 den = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
        __m256 upd = _mm256_div_ps(_mm256_mul_ps(lrv, mhat), den);
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
        float mhat = m[i] / bias_corr1;
        float vhat = v[i] / bias_corr2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

#undef TD_EW_LOOP

// ---------------------------------------------------------------------------
// Direct convolution rows
// ---------------------------------------------------------------------------

void conv3x3_row(size_t channels, size_t w, const float* x_top, size_t chan_stride,
                 const float* weights, size_t w_stride, float* out_row) {
    for (size_t c = 0; c < channels; ++c) {
        const float* r0 = x_top + c * chan_stride;
        const float* r1 = r0 + w;
        const float* r2 = r1 + w;
        const float* k = weights + c * w_stride;
        out_row[0] += k[1] * r0[0] + k[2] * r0[1] + k[4] * r1[0] + k[5] * r1[1] + k[7] * r2[0] +
                      k[8] * r2[1];
        __m256 k0 = _mm256_set1_ps(k[0]), k1 = _mm256_set1_ps(k[1]), k2 = _mm256_set1_ps(k[2]);
        __m256 k3 = _mm256_set1_ps(k[3]), k4 = _mm256_set1_ps(k[4]), k5 = _mm256_set1_ps(k[5]);
        __m256 k6 = _mm256_set1_ps(k[6]), k7 = _mm256_set1_ps(k[7]), k8 = _mm256_set1_ps(k[8]);
        size_t j = 1;
        for (; j + 9 <= w; j += 8) {
            __m256 acc = _mm256_loadu_ps(out_row + j);
            acc = _mm256_fmadd_ps(k0, _mm256_loadu_ps(r0 + j - 1), acc);
            acc = _mm256_fmadd_ps(k1, _mm256_loadu_ps(r0 + j), acc);
            acc = _mm256_fmadd_ps(k2, _mm256_loadu_ps(r0 + j + 1), acc);
            acc = _mm256_fmadd_ps(k3, _mm256_loadu_ps(r1 + j - 1), acc);
            acc = _mm256_fmadd_ps(k4, _mm256_loadu_ps(r1 + j), acc);
            acc = _mm256_fmadd_ps(k5, _mm256_loadu_ps(r1 + j + 1), acc);
            acc = _mm256_fmadd_ps(k6, _mm256_loadu_ps(r2 + j - 1), acc);
            acc = _mm256_fmadd_ps(k7, _mm256_loadu_ps(r2 + j), acc);
            acc = _mm256_fmadd_ps(k8, _mm256_loadu_ps(r2 + j + 1), acc);
            _mm256_storeu_ps(out_row + j, acc);
        }
        for (; j + 1 < w; ++j)
            out_row[j] += k[0] * r0[j - 1] + k[1] * r0[j] + k[2] * r0[j + 1] + k[3] * r1[j - 1] +
                          k[4] * r1[j] + k[5] * r1[j + 1] + k[6] * r2[j - 1] + k[7] * r2[j] +
                          k[8] * r2[j + 1];
        if (w > 1)
            out_row[w - 1] += k[0] * r0[w - 2] + k[1] * r0[w - 1] + k[3] * r1[w - 2] +
                              k[4] * r1[w - 1] + k[6] * r2[w - 2] + k[7] * r2[w - 1];
    }
}

void conv3x3_dw_plane(size_t h, size_t w, const float* x, const float* dout, float* dw9) {
    for (size_t ky = 0; ky < 3; ++ky) {
        for (size_t kx = 0; kx < 3; ++kx) {
            size_t oy0 = ky == 0 ? 1 : 0;
            size_t oy1 = ky == 2 ? h - 1 : h;
            size_t ox0 = kx == 0 ? 1 : 0;
            size_t ox1 = kx == 2 ? w - 1 : w;
            __m256 accv = _mm256_setzero_ps();
            float acc = 0.0f;
            for (size_t oy = oy0; oy < oy1; ++oy) {
                const float* drow = dout + oy * w;
                const float* xrow = x + (oy + ky - 1) * w + kx - 1;
                size_t ox = ox0;
                for (; ox + 8 <= ox1; ox += 8)
                    accv = _mm256_fmadd_ps(_mm256_loadu_ps(drow + ox), _mm256_loadu_ps(xrow + ox),
                                           accv);
                for (; ox < ox1; ++ox) acc += drow[ox] * xrow[ox];
            }
            dw9[ky * 3 + kx] += acc + hsum(accv);
        }
    }
}

}  // namespace avx2

const Table& avx2_table() {
    static Table t = [] {
        Table tt;
        tt.gemm_nn = &avx2::gemm_nn;
        tt.gemm_nt = &avx2::gemm_nt;
        tt.gemm_tn = &avx2::gemm_tn;
        tt.vadd = &avx2::vadd;
        tt.vsub = &avx2::vsub;
        tt.vmul = &avx2::vmul;
        tt.vscale = &avx2::vscale;
        tt.vadd_scalar = &avx2::vadd_scalar;
        tt.vaxpy = &avx2::vaxpy;
        tt.vmul_acc = &avx2::vmul_acc;
        tt.silu_fwd = &avx2::silu_fwd;
        tt.silu_bwd = &avx2::silu_bwd;
        tt.gelu_fwd = &avx2::gelu_fwd;
        tt.gelu_bwd = &avx2::gelu_bwd;
        tt.tanh_fwd = &avx2::tanh_fwd;
        tt.tanh_bwd = &avx2::tanh_bwd;
        tt.exp_fwd = &avx2::exp_fwd;
        tt.exp_bwd = &avx2::exp_bwd;
        tt.softmax_rows = &avx2::softmax_rows;
        tt.softmax_bwd_rows = &avx2::softmax_bwd_rows;
        tt.layernorm_fwd = &avx2::layernorm_fwd;
        tt.layernorm_bwd = &avx2::layernorm_bwd;
        tt.reduce_sum = &avx2::reduce_sum;
        tt.reduce_sqdiff = &avx2::reduce_sqdiff;
        tt.count_nonfinite = &avx2::count_nonfinite;
        tt.adam_update = &avx2::adam_update;
        tt.conv3x3_row = &avx2::conv3x3_row;
        tt.conv3x3_dw_plane = &avx2::conv3x3_dw_plane;
        return tt;
    }();
    return t;
}

}  // namespace td::kern

#endif  // x86_64
