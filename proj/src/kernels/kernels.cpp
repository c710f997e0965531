#include "td/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace td::kern {

namespace {

Table make_scalar_table() {
    Table t;
    t.gemm_nn = &scalar::gemm_nn<float>;
    t.gemm_nt = &scalar::gemm_nt<float>;
    t.gemm_tn = &scalar::gemm_tn<float>;
    t.vadd = &scalar::vadd<float>;
    t.vsub = &scalar::vsub<float>;
    t.vmul = &scalar::vmul<float>;
    t.vscale = &scalar::vscale<float>;
    t.vadd_scalar = &scalar::vadd_scalar<float>;
    t.vaxpy = &scalar::vaxpy<float>;
    t.vmul_acc = &scalar::vmul_acc<float>;
    t.silu_fwd = &scalar::silu_fwd<float>;
    t.silu_bwd = &scalar::silu_bwd<float>;
    t.gelu_fwd = &scalar::gelu_fwd<float>;
    t.gelu_bwd = &scalar::gelu_bwd<float>;
    t.tanh_fwd = &scalar::tanh_fwd<float>;
    t.tanh_bwd = &scalar::tanh_bwd<float>;
    t.exp_fwd = &scalar::exp_fwd<float>;
    t.exp_bwd = &scalar::exp_bwd<float>;
    t.softmax_rows = &scalar::softmax_rows<float>;
    t.softmax_bwd_rows = &scalar::softmax_bwd_rows<float>;
    t.layernorm_fwd = &scalar::layernorm_fwd<float>;
    t.layernorm_bwd = &scalar::layernorm_bwd<float>;
    t.reduce_sum = &scalar::reduce_sum<float>;
    t.reduce_sqdiff = &scalar::reduce_sqdiff<float>;
    t.count_nonfinite = &scalar::count_nonfinite<float>;
    t.adam_update = &scalar::adam_update<float>;
    t.conv3x3_row = &scalar::conv3x3_row<float>;
    t.conv3x3_dw_plane = &scalar::conv3x3_dw_plane<float>;
    return t;
}

struct State {
    Table active;
    Backend backend;
    State() {
        backend = Backend::scalar;
        active = make_scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
        bool want_avx2 = cpu_has_avx2_fma();
        if (const char* env = std::getenv("TD_KERNELS")) {
            if (std::strcmp(env, "scalar") == 0) want_avx2 = false;
            else if (std::strcmp(env, "avx2") == 0 && !cpu_has_avx2_fma())
                throw std::runtime_error("TD_KERNELS=avx2 requested but CPU lacks AVX2+FMA");
        }
        if (want_avx2) {
            active = avx2_table();
            backend = Backend::avx2;
        }
#endif
    }
};

State& state() {
    static State s;
    return s;
}

}  // namespace

const Table& scalar_table() {
    static Table t = make_scalar_table();
    return t;
}

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Table& table() { return state().active; }

Backend active_backend() { return state().backend; }

void force_backend(Backend b) {
    if (b == Backend::scalar) {
        state().active = make_scalar_table();
        state().backend = Backend::scalar;
        return;
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (!cpu_has_avx2_fma()) throw std::runtime_error("AVX2+FMA not available on this CPU");
    state().active = avx2_table();
    state().backend = Backend::avx2;
#else
    throw std::runtime_error("AVX2 backend not built for this architecture");
#endif
}

}  // namespace td::kern
