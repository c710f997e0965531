#pragma once

#include <string>
#include <vector>

#include "td/tensor.hpp"

namespace td {

// Forward-diffusion noise schedule: the beta/alpha/alpha-bar tables indexed by
// timestep t in {1..T}. Timesteps are 1-indexed at every interface; the
// convention alpha_bar(0) == 1 covers the "fully denoised" endpoint.
struct NoiseSchedule {
    int steps = 0;  // T
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::string kind = "linear";
    std::vector<double> betas;       // beta_t at index t-1
    std::vector<double> alphas;      // alpha_t = 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s

    double beta(int t) const { return betas.at(check(t) - 1); }
    double alpha(int t) const { return alphas.at(check(t) - 1); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(check(t) - 1); }

    int check(int t) const {
        if (t < 1 || t > steps)
            throw ValidationError("timestep " + std::to_string(t) + " outside {1.." +
                                  std::to_string(steps) + "}");
        return t;
    }
};

// Linear interpolation beta_t = beta_start + (t-1)/(T-1) * (beta_end - beta_start).
NoiseSchedule build_schedule(int steps, double beta_start, double beta_end,
                             const std::string& kind = "linear");

struct MarginalStats {
    double mean_coeff;  // sqrt(alpha_bar_t)
    double std;         // sqrt(1 - alpha_bar_t)
};
MarginalStats marginal_stats(const NoiseSchedule& s, int t);

// Closed-form forward noising: z_t = sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps.
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);

}  // namespace td
