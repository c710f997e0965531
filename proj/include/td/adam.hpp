#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "td/tensor.hpp"

namespace td {

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;  // added to sqrt(v-hat)
};

struct AdamState {
    uint64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

// Standard bias-corrected Adam, applied in place to params using their
// accumulated gradients. First call initializes zero moment buffers; the step
// counter increments by exactly 1 per call. Throws ShapeError if state and
// params disagree.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg);

}  // namespace td
