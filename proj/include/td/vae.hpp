#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "td/image.hpp"
#include "td/params.hpp"
#include "td/tensor.hpp"

namespace td {

struct VaeConfig {
    int base_channels = 32;  // encoder stage widths [c, 2c, 4c]
    int latent_channels = 4;
    float logvar_min = -30.0f;
    float logvar_max = 20.0f;
};

enum class EncodeMode { mean, sample };

// Small convolutional VAE realizing the f=8 latent contract:
// 3 x H x W -> latent_channels x H/8 x W/8 (three stride-2 stages), with a
// mirrored transposed-conv decoder ending in tanh so decoded images stay in
// [-1,1]. The encoder head emits 2x latent channels (mean, log-variance).
struct Vae {
    VaeConfig cfg;
    ParamSet params;
    float scale_factor = 1.0f;

    static Vae init(const VaeConfig& cfg, uint64_t seed);

    // x: [3,H,W] or [B,3,H,W] in [-1,1]; H, W divisible by 8.
    // Returns [., 2*latent, H/8, W/8] moments (log-variance clamped).
    Tensor encode_moments(const Tensor& x) const;
    // mean mode is deterministic; sample mode adds sigma * eps(seed).
    Tensor encode(const Tensor& x, EncodeMode mode, uint64_t seed = 0) const;
    Tensor decode(const Tensor& z) const;

    Tensor scale_latent(const Tensor& z) const { return scalar_scale(z, scale_factor); }
    Tensor unscale_latent(const Tensor& z) const { return scalar_scale(z, 1.0f / scale_factor); }
};

struct VaeTrainConfig {
    int steps = 3000;
    int batch = 16;
    float lr = 1e-3f;
    float kl_weight = 1e-6f;
    uint64_t seed = 0;
};

struct VaeTrainStats {
    std::vector<float> losses;  // total loss per step
};

// Minimizes reconstruction MSE + kl_weight * KL(q || N(0,I)) (KL averaged per
// latent element). The dataset may mix table images and rendered masks; all
// images must share one size. Throws on an empty dataset.
VaeTrainStats train_vae(Vae& vae, const std::vector<Image>& dataset, const VaeTrainConfig& cfg);

// s = 1 / std(all latent elements pooled). Throws on zero variance or fewer
// than min_count latents.
float compute_scale_factor(std::span<const Tensor> latents, size_t min_count = 100);

}  // namespace td
