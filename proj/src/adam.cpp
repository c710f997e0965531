#include "td/adam.hpp"

#include <cmath>

#include "td/kernels.hpp"

namespace td {

void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.empty() && state.v.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0f);
            state.v[i].assign(params[i].size(), 0.0f);
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i)
        if (state.m[i].size() != params[i].size() || state.v[i].size() != params[i].size())
            throw ShapeError("adam_step: moment buffers for parameter " + std::to_string(i) +
                             " have " + std::to_string(state.m[i].size()) + " elements, parameter has " +
                             std::to_string(params[i].size()));

    state.step += 1;
    float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(state.step));
    float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(state.step));

    const kern::Table& k = kern::table();
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const std::vector<float>& g = p.grad();
        k.adam_update(p.size(), p.data(), g.data(), state.m[i].data(), state.v[i].data(), cfg.lr,
                      cfg.beta1, cfg.beta2, cfg.eps, bc1, bc2);
        check_finite("adam_step", p);
    }
}

}  // namespace td
