#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "td/adam.hpp"
#include "td/annotations.hpp"
#include "td/dit.hpp"
#include "td/latent_cache.hpp"
#include "td/schedule.hpp"
#include "td/vae.hpp"

namespace td {

// Noise predictor: (z_t [B,4,h,w] or [4,h,w], mask latents or nullptr,
// one timestep per sample). The DiT supplies the real one; tests substitute
// oracles (e.g. the true injected noise).
using NoisePredictor = std::function<Tensor(const Tensor&, const Tensor*, std::span<const int>)>;

NoisePredictor predictor_from(const DiT& dit);

// zhat0 = (z_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t): the exact algebraic
// inverse of q_sample. Near t = T this amplifies eps_hat error by about
// 1/sqrt(ab_T) (~158 on the standard schedule) — a conditioning hazard, which
// is why samplers re-noise via ddim_step instead of trusting zhat0 directly.
Tensor estimate_z0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& s);

// Deterministic (eta = 0) DDIM update toward t_prev < t, with ab_0 = 1:
// z_prev = sqrt(ab_prev) * zhat0 + sqrt(1 - ab_prev) * eps_hat.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s);

// Evenly spaced integers from T down to 1 (inclusive endpoints, duplicates
// removed): t_i = round(T - i * (T-1) / (steps-1)); steps = T gives exactly
// T, T-1, ..., 1.
std::vector<int> sampling_timesteps(int total_steps, int steps);

// Per-sample t ~ Uniform{1..T} and eps ~ N(0,I), both derived from
// (seed, sample_keys[i]) so the loss is invariant to batch order; then
// mean squared error between eps and f(q_sample(z0, t, eps), m, t).
Tensor training_loss(const NoisePredictor& f, const Tensor& z0_batch, const Tensor* m_batch,
                     const NoiseSchedule& s, uint64_t seed, std::span<const uint64_t> sample_keys);

// --- sampling ----------------------------------------------------------------

struct SampleResult {
    Tensor final_latent;             // scaled latent space
    std::vector<Tensor> trajectory;  // latent after each executed step
    Image image;                     // decoded to [0,1]
};

// Latent-space DDIM loop from z_T ~ N(0,I) seeded by `seed`.
std::pair<Tensor, std::vector<Tensor>> sample_latent(const NoisePredictor& f,
                                                     const Tensor* mask_latent, Shape latent_shape,
                                                     const NoiseSchedule& s, int steps,
                                                     uint64_t seed);

// Full sampling operation. Conditional checkpoints require a mask (encoded
// through the VAE in RGB, scaled by s, concatenated at every step);
// unconditional ones must be called without a mask.
SampleResult sample(const StructureMask* mask, const DiT& dit, const Vae& vae,
                    const NoiseSchedule& s, int steps, uint64_t seed);

// --- training ----------------------------------------------------------------

struct TrainConfig {
    std::string preset = "desk-64";
    bool conditional = true;
    int iterations = 2000;
    int batch = 32;
    float lr = 1e-4f;
    int schedule_steps = 1000;  // T
    double beta_start = 1e-4;
    double beta_end = 0.02;
    uint64_t seed = 0;
    int checkpoint_every = 0;  // 0 = final checkpoint only
    DiTConfig dit;             // resolved from preset + conditional

    void validate() const;
};

TrainConfig make_train_config(const std::string& preset, bool conditional);

struct Checkpoint {
    DiT dit;
    Vae vae;  // frozen encoder/decoder + scale factor
    NoiseSchedule schedule;
    AdamState adam;
    TrainConfig config;
    uint64_t iteration = 0;  // completed optimizer steps; with config.seed this
                             // is the full RNG state (step streams are derived)
};

// Writes <base>.tdw (parameters + Adam moments) and <base>.json (configs,
// iteration, scale factor, RNG state). Both writes are atomic.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& base);
Checkpoint load_checkpoint(const std::filesystem::path& base);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<float> losses;  // one entry per completed step of this run
};

// Iterates cache batches, optimizing the DiT with Adam. Writes ckpt_NNNNNN
// checkpoints and metrics.csv (iteration,loss,wall_ms) under run_dir unless
// run_dir is empty. Validates cache/config pairing before step 1. `resume`
// continues from a loaded checkpoint, reproducing the uninterrupted run.
TrainResult train_loop(const TrainConfig& cfg, const LatentCache& cache, const Vae& vae,
                       const std::filesystem::path& run_dir, const Checkpoint* resume = nullptr);

}  // namespace td
