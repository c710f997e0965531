#pragma once

// Brute-force Frechet-distance oracle: matrix square roots via the
// Denman-Beavers iteration (a genuinely different algebraic route from the
// library's Jacobi eigendecomposition). Test-only.

#include <cmath>
#include <vector>

#include "td/evaluation.hpp"
#include "td/rng.hpp"

namespace tdtest {

inline std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                                   size_t d) {
    std::vector<double> c(d * d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t k = 0; k < d; ++k)
            for (size_t j = 0; j < d; ++j) c[i * d + j] += a[i * d + k] * b[k * d + j];
    return c;
}

inline std::vector<double> mat_inv(std::vector<double> a, size_t d) {
    std::vector<double> inv(d * d, 0.0);
    for (size_t i = 0; i < d; ++i) inv[i * d + i] = 1.0;
    for (size_t col = 0; col < d; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < d; ++r)
            if (std::fabs(a[r * d + col]) > std::fabs(a[pivot * d + col])) pivot = r;
        for (size_t j = 0; j < d; ++j) {
            std::swap(a[col * d + j], a[pivot * d + j]);
            std::swap(inv[col * d + j], inv[pivot * d + j]);
        }
        double diag = a[col * d + col];
        for (size_t j = 0; j < d; ++j) {
            a[col * d + j] /= diag;
            inv[col * d + j] /= diag;
        }
        for (size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            double f = a[r * d + col];
            for (size_t j = 0; j < d; ++j) {
                a[r * d + j] -= f * a[col * d + j];
                inv[r * d + j] -= f * inv[col * d + j];
            }
        }
    }
    return inv;
}

inline std::vector<double> sqrtm_db(const std::vector<double>& m, size_t d) {
    std::vector<double> y = m, z(d * d, 0.0);
    for (size_t i = 0; i < d; ++i) z[i * d + i] = 1.0;
    for (int it = 0; it < 60; ++it) {
        std::vector<double> yi = mat_inv(y, d);
        std::vector<double> zi = mat_inv(z, d);
        for (size_t i = 0; i < d * d; ++i) {
            double ny = 0.5 * (y[i] + zi[i]);
            double nz = 0.5 * (z[i] + yi[i]);
            y[i] = ny;
            z[i] = nz;
        }
    }
    return y;
}

inline double frechet_oracle(const td::GaussianStats& a, const td::GaussianStats& b) {
    size_t d = a.dim;
    double mean_term = 0;
    for (size_t i = 0; i < d; ++i) {
        double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }
    std::vector<double> sa_sqrt = sqrtm_db(a.cov, d);
    std::vector<double> sandwich = mat_mul(mat_mul(sa_sqrt, b.cov, d), sa_sqrt, d);
    std::vector<double> root = sqrtm_db(sandwich, d);
    double tr = 0, ta = 0, tb = 0;
    for (size_t i = 0; i < d; ++i) {
        tr += root[i * d + i];
        ta += a.cov[i * d + i];
        tb += b.cov[i * d + i];
    }
    return mean_term + ta + tb - 2.0 * tr;
}

// Random well-conditioned SPD stats (A^T A + 0.05 I).
inline td::GaussianStats spd_stats(uint64_t seed, size_t d) {
    td::Rng rng(seed);
    std::vector<double> a(d * d);
    for (auto& v : a) v = rng.uniform() * 2.0 - 1.0;
    td::GaussianStats g;
    g.dim = d;
    g.n = 1000;
    g.mean.resize(d);
    for (auto& v : g.mean) v = rng.uniform() * 2.0 - 1.0;
    g.cov.assign(d * d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j) {
            for (size_t k = 0; k < d; ++k) g.cov[i * d + j] += a[k * d + i] * a[k * d + j];
            if (i == j) g.cov[i * d + j] += 0.05;
        }
    return g;
}

}  // namespace tdtest
