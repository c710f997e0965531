#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "td/params.hpp"
#include "td/tensor.hpp"

namespace td {

struct DiTConfig {
    int depth = 4;
    int dim = 128;
    int heads = 4;
    int patch = 2;
    int in_channels = 8;  // 4 latent + 4 mask concatenated; 4 when unconditional
    int out_channels = 4;
    int latent_h = 8;
    int latent_w = 8;
    int max_t = 1000;
    bool pos_embed = true;  // learned per-position embeddings (off only in tests)

    bool conditional() const { return in_channels > out_channels; }
    int tokens() const { return (latent_h / patch) * (latent_w / patch); }
    int token_width() const { return in_channels * patch * patch; }
    void validate() const;
};

// Preset name in {"desk-64", "paper-256", "paper-512"}.
DiTConfig dit_preset(const std::string& name, bool conditional);

// Channel concatenation of noisy latent and mask latent: [0..4) = z_t,
// [4..8) = m. Accepts [C,h,w] or [B,C,h,w].
Tensor concat_condition(const Tensor& z_t, const Tensor& m_latent);

// [C,h,w] -> [(h/p)*(w/p), C*p*p] in row-major patch order (feature layout:
// channel-major, then patch row, then patch column). Batched input maps to
// [B, T, C*p*p]. Built from reshape/transpose so it is differentiable.
Tensor patchify(const Tensor& u, int p);
// Inverse for the C=out_channels head output.
Tensor unpatchify(const Tensor& tokens, int channels, int h, int w, int p);

// Sinusoidal timestep embedding: half sin / half cos over `dim/2` wavelengths
// geometric in [1, 1e4]. Values lie in [-1,1]; the conditioning MLP comes on
// top of this inside the DiT.
std::vector<float> timestep_embed(int t, int dim, int max_t);

// Patch-transformer noise predictor with adaLN-Zero conditioning: every
// block's modulation projection and the final head are zero-initialized, so a
// fresh model is the identity in every residual branch and predicts exactly 0.
struct DiT {
    DiTConfig cfg;
    ParamSet params;

    static DiT init(const DiTConfig& cfg, uint64_t seed);

    // z_t: [4,h,w] or [B,4,h,w]; m_latent must be present iff the config is
    // conditional; t carries one timestep per batch sample.
    Tensor predict_noise(const Tensor& z_t, const Tensor* m_latent, std::span<const int> t) const;
    Tensor predict_noise(const Tensor& z_t, const Tensor* m_latent, int t) const {
        return predict_noise(z_t, m_latent, std::span<const int>(&t, 1));
    }

    // Timestep conditioning vector: sinusoid -> SiLU MLP. [B, dim]
    Tensor condition_vector(std::span<const int> t) const;

    // Single adaLN block; exposed for the initialization-identity and
    // permutation-equivariance tests. tokens: [B*T, dim]; cond: [B, dim].
    Tensor block_apply(int layer, const Tensor& tokens, const Tensor& cond, size_t batch,
                       size_t tokens_per_sample) const;
};

}  // namespace td
