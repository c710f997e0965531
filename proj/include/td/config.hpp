#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "td/annotations.hpp"
#include "td/diffusion.hpp"
#include "td/vae.hpp"

namespace td {

// Run configuration: one JSON document with sections
// {data, vae, schedule, dit, train, sample, eval}. Unknown keys are rejected;
// every field has a default; the resolved (defaults-applied) document is
// echoed into the run directory by the CLI.
struct RunConfig {
    // data
    int data_count = 2000;
    int data_heldout = 256;
    StructureConstraints structure;  // image size + band constraints

    // vae
    VaeConfig vae;
    VaeTrainConfig vae_train;
    float vae_kl_weight = 1e-6f;
    bool vae_include_masks = true;  // masks join the VAE training set

    // schedule
    int schedule_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string schedule_kind = "linear";

    // dit (preset plus optional explicit overrides; <= 0 means "preset value")
    std::string preset = "desk-64";
    bool conditional = true;
    int dit_depth = 0;
    int dit_dim = 0;
    int dit_heads = 0;
    int dit_patch = 0;

    // train
    int train_iterations = 2000;
    int train_batch = 32;
    float train_lr = 1e-4f;
    int checkpoint_every = 0;
    int data_samples = 0;  // informational cap (paper rows use 450k); 0 = all

    // sample
    int sample_steps = 750;
    int sample_count = 64;

    // eval
    std::string eval_extractor = "conv64";
    double eval_tau_dark = 0.25;
    int eval_min_run = 2;

    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_json_file(const std::filesystem::path& path);
    // Resolved config (all defaults applied); re-parses to an equal config.
    std::string to_json() const;

    // Adjusts image size and DiT preset together ("desk-64", "paper-256",
    // "paper-512").
    void apply_preset(const std::string& name);

    DiTConfig dit_config() const;
    TrainConfig train_config(uint64_t seed) const;
    void validate() const;
};

// FNV-1a over a string; used for content-addressed artifact names.
uint64_t fnv1a(std::string_view text);
std::string hash_hex(uint64_t h);  // 8 hex chars

}  // namespace td
