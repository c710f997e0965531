#include "td/schedule.hpp"

#include <cmath>

namespace td {

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end,
                             const std::string& kind) {
    if (steps < 1) throw ValidationError("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ValidationError("build_schedule: need 0 < beta_start <= beta_end < 1, got [" +
                              std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    if (kind != "linear")
        throw ValidationError("build_schedule: unsupported schedule kind '" + kind + "'");

    NoiseSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.kind = kind;
    s.betas.resize(steps);
    s.alphas.resize(steps);
    s.alpha_bars.resize(steps);
    double bar = 1.0;
    for (int t = 1; t <= steps; ++t) {
        double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
        double beta = beta_start + frac * (beta_end - beta_start);
        s.betas[t - 1] = beta;
        s.alphas[t - 1] = 1.0 - beta;
        bar *= s.alphas[t - 1];
        s.alpha_bars[t - 1] = bar;
    }
    return s;
}

MarginalStats marginal_stats(const NoiseSchedule& s, int t) {
    double ab = s.alpha_bar(s.check(t));
    return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (z0.shape() != eps.shape())
        throw ShapeError("q_sample: z0 " + shape_str(z0.shape()) + " vs eps " +
                         shape_str(eps.shape()));
    MarginalStats m = marginal_stats(s, t);
    return add(scalar_scale(z0, static_cast<float>(m.mean_coeff)),
               scalar_scale(eps, static_cast<float>(m.std)));
}

}  // namespace td
