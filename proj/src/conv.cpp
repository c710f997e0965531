#include <type_traits>
#include <cstring>
#include <vector>

#include "op_common.hpp"
#include "td/tensor.hpp"

// conv2d / transposed_conv2d via im2col + GEMM. im2col/col2im are pure data
// movement and stay scalar; all arithmetic goes through the kernel table.

namespace td {

using detail::K;
using detail::finish;
using detail::out_grad;
using detail::shape_fail;

namespace {

// Valid output range [begin, end) such that 0 <= o*stride + k - pad < extent.
inline std::pair<size_t, size_t> valid_range(size_t out_len, size_t k, size_t stride, size_t pad,
                                             size_t extent) {
    size_t begin = k >= pad ? 0 : (pad - k + stride - 1) / stride;
    ptrdiff_t top = static_cast<ptrdiff_t>(extent + pad) - static_cast<ptrdiff_t>(k) - 1;
    size_t end = top < 0 ? 0 : std::min(out_len, static_cast<size_t>(top) / stride + 1);
    return {std::min(begin, end), end};
}

// cols: [C*kh*kw, OH*OW]
template <class T>
void im2col(const T* img, size_t C, size_t H, size_t W, size_t kh, size_t kw, size_t stride,
            size_t pad, size_t OH, size_t OW, T* cols) {
    for (size_t c = 0; c < C; ++c) {
        for (size_t ky = 0; ky < kh; ++ky) {
            auto [oy0, oy1] = valid_range(OH, ky, stride, pad, H);
            for (size_t kx = 0; kx < kw; ++kx) {
                T* crow = cols + ((c * kh + ky) * kw + kx) * (OH * OW);
                auto [ox0, ox1] = valid_range(OW, kx, stride, pad, W);
                const ptrdiff_t off = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(pad);
                if (oy0 > 0) std::fill(crow, crow + oy0 * OW, T(0));
                for (size_t oy = oy0; oy < oy1; ++oy) {
                    size_t iy = oy * stride + ky - pad;
                    const T* srcrow = img + (c * H + iy) * W;
                    T* dst = crow + oy * OW;
                    if (ox0 > 0) std::fill(dst, dst + ox0, T(0));
                    if (stride == 1) {
                        std::memcpy(dst + ox0, srcrow + (static_cast<ptrdiff_t>(ox0) + off),
                                    (ox1 - ox0) * sizeof(T));
                    } else {
                        for (size_t ox = ox0; ox < ox1; ++ox)
                            dst[ox] = srcrow[static_cast<ptrdiff_t>(ox * stride) + off];
                    }
                    if (ox1 < OW) std::fill(dst + ox1, dst + OW, T(0));
                }
                if (oy1 < OH) std::fill(crow + oy1 * OW, crow + OH * OW, T(0));
            }
        }
    }
}

// img_acc[C,H,W] += scatter of cols (inverse indexing of im2col)
template <class T>
void col2im(const T* cols, size_t C, size_t H, size_t W, size_t kh, size_t kw, size_t stride,
            size_t pad, size_t OH, size_t OW, T* img_acc) {
    for (size_t c = 0; c < C; ++c) {
        for (size_t ky = 0; ky < kh; ++ky) {
            auto [oy0, oy1] = valid_range(OH, ky, stride, pad, H);
            for (size_t kx = 0; kx < kw; ++kx) {
                const T* crow = cols + ((c * kh + ky) * kw + kx) * (OH * OW);
                auto [ox0, ox1] = valid_range(OW, kx, stride, pad, W);
                const ptrdiff_t off = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(pad);
                for (size_t oy = oy0; oy < oy1; ++oy) {
                    size_t iy = oy * stride + ky - pad;
                    T* dstrow = img_acc + (c * H + iy) * W;
                    const T* src = crow + oy * OW;
                    for (size_t ox = ox0; ox < ox1; ++ox)
                        dstrow[static_cast<ptrdiff_t>(ox * stride) + off] += src[ox];
                }
            }
        }
    }
}

struct ConvDims {
    size_t batch, channels, height, width;
    bool batched;
};

ConvDims split_input(const char* op, const Shape& xs) {
    if (xs.size() == 4) return {xs[0], xs[1], xs[2], xs[3], true};
    if (xs.size() == 3) return {1, xs[0], xs[1], xs[2], false};
    shape_fail(op, "input must be [C,H,W] or [B,C,H,W], got " + shape_str(xs));
}

// --- float fast paths --------------------------------------------------------
// 3x3 stride-1 pad-1 and transposed 4x4 stride-2 pad-1 run through direct row
// kernels; everything else (and the double path) uses im2col + GEMM.

bool direct3x3_ok(size_t kh, size_t kw, size_t stride, size_t pad, size_t h, size_t w) {
    return kh == 3 && kw == 3 && stride == 1 && pad == 1 && h >= 3 && w >= 3 && h * w >= 256;
}


// top/bottom rows where a ky tap falls off the plane
void conv3x3_edge_row(size_t channels, size_t h, size_t w, const float* x_plane,
                      size_t chan_stride, const float* weights, size_t w_stride, size_t oy,
                      float* out_row) {
    for (size_t c = 0; c < channels; ++c) {
        const float* plane = x_plane + c * chan_stride;
        const float* k = weights + c * w_stride;
        for (size_t ox = 0; ox < w; ++ox) {
            float acc = 0.0f;
            for (size_t ky = 0; ky < 3; ++ky) {
                ptrdiff_t iy = static_cast<ptrdiff_t>(oy + ky) - 1;
                if (iy < 0 || iy >= static_cast<ptrdiff_t>(h)) continue;
                const float* row = plane + static_cast<size_t>(iy) * w;
                for (size_t kx = 0; kx < 3; ++kx) {
                    ptrdiff_t ix = static_cast<ptrdiff_t>(ox + kx) - 1;
                    if (ix < 0 || ix >= static_cast<ptrdiff_t>(w)) continue;
                    acc += k[ky * 3 + kx] * row[static_cast<size_t>(ix)];
                }
            }
            out_row[ox] += acc;
        }
    }
}

// out plane (already zeroed) += conv3x3(x, w) for one output channel
void conv3x3_plane(size_t in_channels, size_t h, size_t w, const float* x_plane,
                   size_t chan_stride, const float* weights, size_t w_stride, float* out_plane) {
    const auto& kt = kern::table();
    conv3x3_edge_row(in_channels, h, w, x_plane, chan_stride, weights, w_stride, 0, out_plane);
    for (size_t oy = 1; oy + 1 < h; ++oy)
        kt.conv3x3_row(in_channels, w, x_plane + (oy - 1) * w, chan_stride, weights, w_stride,
                       out_plane + oy * w);
    if (h > 1)
        conv3x3_edge_row(in_channels, h, w, x_plane, chan_stride, weights, w_stride, h - 1,
                         out_plane + (h - 1) * w);
}

// (iy, ky) pairs feeding output row oy of a k4 s2 p1 transposed conv
inline size_t tconv_pairs(size_t oy, size_t h, size_t ky_out[2], size_t iy_out[2]) {
    size_t n = 0;
    for (size_t ky = 0; ky < 4; ++ky) {
        ptrdiff_t num = static_cast<ptrdiff_t>(oy) + 1 - static_cast<ptrdiff_t>(ky);
        if (num < 0 || num % 2 != 0) continue;
        size_t iy = static_cast<size_t>(num) / 2;
        if (iy >= h) continue;
        ky_out[n] = ky;
        iy_out[n] = iy;
        ++n;
    }
    return n;
}

void interleave_row(size_t w, const float* even, const float* odd, float* out) {
    for (size_t j = 0; j < w; ++j) {
        out[2 * j] = even[j];
        out[2 * j + 1] = odd[j];
    }
}

void deinterleave_row(size_t w, const float* in, float* even, float* odd) {
    for (size_t j = 0; j < w; ++j) {
        even[j] = in[2 * j];
        odd[j] = in[2 * j + 1];
    }
}

}  // namespace

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, size_t stride,
                  size_t padding) {
    ConvDims d = split_input("conv2d", x.shape());
    const Shape& ws = w.shape();
    if (ws.size() != 4) shape_fail("conv2d", "weight must be [OC,C,kh,kw], got " + shape_str(ws));
    size_t OC = ws[0], kh = ws[2], kw = ws[3];
    if (ws[1] != d.channels)
        shape_fail("conv2d",
                   "channel mismatch: input " + shape_str(x.shape()) + " vs weight " + shape_str(ws));
    if (stride == 0) throw ValidationError("conv2d: stride must be positive");
    if (d.height + 2 * padding < kh || d.width + 2 * padding < kw)
        shape_fail("conv2d", "kernel " + shape_str(ws) + " larger than padded input " +
                                 shape_str(x.shape()));
    if (bias.defined() && (bias.ndim() != 1 || bias.shape()[0] != OC))
        shape_fail("conv2d", "bias must be [OC], got " + shape_str(bias.shape()));

    size_t OH = (d.height + 2 * padding - kh) / stride + 1;
    size_t OW = (d.width + 2 * padding - kw) / stride + 1;
    size_t ckk = d.channels * kh * kw, ohw = OH * OW;
    size_t in_plane = d.channels * d.height * d.width;

    Shape os = d.batched ? Shape{d.batch, OC, OH, OW} : Shape{OC, OH, OW};
    TensorT<T> out(os);

    if constexpr (std::is_same_v<T, float>) {
        if (direct3x3_ok(kh, kw, stride, padding, d.height, d.width) && d.channels * OC <= 4096) {
            const auto& kt = kern::table();
            size_t H = d.height, W = d.width, C = d.channels, plane = H * W;
            for (size_t b = 0; b < d.batch; ++b) {
                const float* xb = x.data() + b * in_plane;
                for (size_t oc = 0; oc < OC; ++oc) {
                    float* ob = out.data() + (b * OC + oc) * plane;
                    conv3x3_plane(C, H, W, xb, plane, w.data() + oc * C * 9, 9, ob);
                    if (bias.defined()) kt.vadd_scalar(plane, ob, bias.data()[oc], ob);
                }
            }
            auto xn = x.node(), wn = w.node(), on = out.node();
            auto bn = bias.defined() ? bias.node() : nullptr;
            size_t B = d.batch;
            finish("conv2d", out, {&x, &w, &bias}, [xn, wn, bn, on, B, C, H, W, OC] {
                const float* g = out_grad(on);
                if (!g) return;
                const auto& kt = kern::table();
                size_t plane = H * W, in_plane = C * plane;
                if (wn->requires_grad) {
                    float* dw = wn->grad_buf().data();
                    for (size_t b = 0; b < B; ++b)
                        for (size_t oc = 0; oc < OC; ++oc)
                            for (size_t ic = 0; ic < C; ++ic)
                                kt.conv3x3_dw_plane(H, W, xn->value.data() + b * in_plane + ic * plane,
                                                    g + (b * OC + oc) * plane,
                                                    dw + (oc * C + ic) * 9);
                }
                if (xn->requires_grad) {
                    // input grad = correlation with the flipped kernel, summed
                    // over output channels
                    std::vector<float> wflip(OC * 9);
                    float* dx = xn->grad_buf().data();
                    for (size_t ic = 0; ic < C; ++ic) {
                        for (size_t oc = 0; oc < OC; ++oc)
                            for (size_t ky = 0; ky < 3; ++ky)
                                for (size_t kx = 0; kx < 3; ++kx)
                                    wflip[oc * 9 + ky * 3 + kx] =
                                        wn->value.data()[(oc * C + ic) * 9 + (2 - ky) * 3 + (2 - kx)];
                        for (size_t b = 0; b < B; ++b)
                            conv3x3_plane(OC, H, W, g + b * OC * plane, plane, wflip.data(), 9,
                                          dx + b * in_plane + ic * plane);
                    }
                }
                if (bn && bn->requires_grad) {
                    float* db = bn->grad_buf().data();
                    for (size_t b = 0; b < B; ++b)
                        for (size_t oc = 0; oc < OC; ++oc)
                            db[oc] += kt.reduce_sum(plane, g + (b * OC + oc) * plane);
                }
            });
            return out;
        }
    }

    std::vector<T> cols(ckk * ohw);
    for (size_t b = 0; b < d.batch; ++b) {
        im2col(x.data() + b * in_plane, d.channels, d.height, d.width, kh, kw, stride, padding, OH,
               OW, cols.data());
        T* ob = out.data() + b * OC * ohw;
        K<T>::gemm_nn(OC, ohw, ckk, w.data(), ckk, cols.data(), ohw, ob, ohw, false);
        if (bias.defined())
            for (size_t oc = 0; oc < OC; ++oc)
                K<T>::vadd_scalar(ohw, ob + oc * ohw, bias.data()[oc], ob + oc * ohw);
    }

    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    size_t B = d.batch, C = d.channels, H = d.height, W = d.width;
    finish("conv2d", out, {&x, &w, &bias},
           [xn, wn, bn, on, B, C, H, W, OC, kh, kw, stride, padding, OH, OW] {
               const T* g = out_grad(on);
               if (!g) return;
               size_t ckk = C * kh * kw, ohw = OH * OW, in_plane = C * H * W;
               std::vector<T> cols;
               std::vector<T> dcols;
               if (wn->requires_grad) cols.resize(ckk * ohw);
               if (xn->requires_grad) dcols.resize(ckk * ohw);
               for (size_t b = 0; b < B; ++b) {
                   const T* gb = g + b * OC * ohw;
                   if (wn->requires_grad) {
                       im2col(xn->value.data() + b * in_plane, C, H, W, kh, kw, stride, padding, OH,
                              OW, cols.data());
                       K<T>::gemm_nt(OC, ckk, ohw, gb, ohw, cols.data(), ohw,
                                     wn->grad_buf().data(), ckk, true);
                   }
                   if (xn->requires_grad) {
                       K<T>::gemm_tn(ckk, ohw, OC, wn->value.data(), ckk, gb, ohw, dcols.data(),
                                     ohw, false);
                       col2im(dcols.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                              xn->grad_buf().data() + b * in_plane);
                   }
                   if (bn && bn->requires_grad) {
                       T* db = bn->grad_buf().data();
                       for (size_t oc = 0; oc < OC; ++oc)
                           db[oc] += K<T>::reduce_sum(ohw, gb + oc * ohw);
                   }
               }
           });
    return out;
}

template <class T>
TensorT<T> transposed_conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                             size_t stride, size_t padding) {
    ConvDims d = split_input("transposed_conv2d", x.shape());
    const Shape& ws = w.shape();
    if (ws.size() != 4)
        shape_fail("transposed_conv2d", "weight must be [IC,OC,kh,kw], got " + shape_str(ws));
    size_t IC = ws[0], OC = ws[1], kh = ws[2], kw = ws[3];
    if (IC != d.channels)
        shape_fail("transposed_conv2d",
                   "channel mismatch: input " + shape_str(x.shape()) + " vs weight " + shape_str(ws));
    if (stride == 0) throw ValidationError("transposed_conv2d: stride must be positive");
    if ((d.height - 1) * stride + kh <= 2 * padding || (d.width - 1) * stride + kw <= 2 * padding)
        shape_fail("transposed_conv2d", "output collapses to zero size");
    if (bias.defined() && (bias.ndim() != 1 || bias.shape()[0] != OC))
        shape_fail("transposed_conv2d", "bias must be [OC], got " + shape_str(bias.shape()));

    size_t OHt = (d.height - 1) * stride + kh - 2 * padding;
    size_t OWt = (d.width - 1) * stride + kw - 2 * padding;
    size_t ockk = OC * kh * kw, hw = d.height * d.width, out_plane = OC * OHt * OWt;
    size_t in_plane = IC * hw;

    Shape os = d.batched ? Shape{d.batch, OC, OHt, OWt} : Shape{OC, OHt, OWt};
    TensorT<T> out(os);

    std::vector<T> cols(ockk * hw);
    for (size_t b = 0; b < d.batch; ++b) {
        // cols = W^T x, then scatter onto the upsampled grid
        K<T>::gemm_tn(ockk, hw, IC, w.data(), ockk, x.data() + b * in_plane, hw, cols.data(), hw,
                      false);
        T* ob = out.data() + b * out_plane;
        col2im(cols.data(), OC, OHt, OWt, kh, kw, stride, padding, d.height, d.width, ob);
        if (bias.defined())
            for (size_t oc = 0; oc < OC; ++oc)
                K<T>::vadd_scalar(OHt * OWt, ob + oc * OHt * OWt, bias.data()[oc],
                                  ob + oc * OHt * OWt);
    }

    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    size_t B = d.batch, H = d.height, W = d.width;
    finish("transposed_conv2d", out, {&x, &w, &bias},
           [xn, wn, bn, on, B, IC, OC, H, W, kh, kw, stride, padding, OHt, OWt] {
               const T* g = out_grad(on);
               if (!g) return;
               size_t ockk = OC * kh * kw, hw = H * W;
               size_t in_plane = IC * hw, out_plane = OC * OHt * OWt;
               std::vector<T> dcols(ockk * hw);
               for (size_t b = 0; b < B; ++b) {
                   const T* gb = g + b * out_plane;
                   im2col(gb, OC, OHt, OWt, kh, kw, stride, padding, H, W, dcols.data());
                   if (xn->requires_grad)
                       K<T>::gemm_nn(IC, hw, ockk, wn->value.data(), ockk, dcols.data(), hw,
                                     xn->grad_buf().data() + b * in_plane, hw, true);
                   if (wn->requires_grad)
                       K<T>::gemm_nt(IC, ockk, hw, xn->value.data() + b * in_plane, hw,
                                     dcols.data(), hw, wn->grad_buf().data(), ockk, true);
                   if (bn && bn->requires_grad) {
                       T* db = bn->grad_buf().data();
                       for (size_t oc = 0; oc < OC; ++oc)
                           db[oc] += K<T>::reduce_sum(OHt * OWt, gb + oc * OHt * OWt);
                   }
               }
           });
    return out;
}

template TensorT<float> conv2d<float>(const TensorT<float>&, const TensorT<float>&,
                                      const TensorT<float>&, size_t, size_t);
template TensorT<double> conv2d<double>(const TensorT<double>&, const TensorT<double>&,
                                        const TensorT<double>&, size_t, size_t);
template TensorT<float> transposed_conv2d<float>(const TensorT<float>&, const TensorT<float>&,
                                                 const TensorT<float>&, size_t, size_t);
template TensorT<double> transposed_conv2d<double>(const TensorT<double>&, const TensorT<double>&,
                                                   const TensorT<double>&, size_t, size_t);

}  // namespace td
