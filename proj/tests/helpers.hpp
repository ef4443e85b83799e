#pragma once
#include <cmath>
#include <functional>
#include <vector>

#include "dipair/rng.hpp"
#include "dipair/tensor.hpp"

namespace dipair::testing {

inline Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, bool requires_grad = true,
                            float lo = -1.f, float hi = 1.f) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<float> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Central finite differences over the raw values of `x`, with `eval`
// recomputing the scalar objective from scratch each call.
inline std::vector<float> finite_difference_grad(Tensor x, const std::function<float()>& eval,
                                                 float h = 1e-3f) {
    NoGradGuard ng;
    std::vector<float> grad(x.size());
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const float saved = x.data()[i];
        x.data()[i] = saved + h;
        const float up = eval();
        x.data()[i] = saved - h;
        const float down = eval();
        x.data()[i] = saved;
        grad[i] = (up - down) / (2.f * h);
    }
    return grad;
}

// Relative error with a floor so finite-difference noise on near-zero
// gradients does not dominate.
inline double relative_error(float analytic, float numeric, double floor = 0.1) {
    const double denom = std::max({floor, std::fabs((double)analytic), std::fabs((double)numeric)});
    return std::fabs((double)analytic - (double)numeric) / denom;
}

inline double max_relative_error(const std::vector<float>& analytic,
                                 const std::vector<float>& numeric, double floor = 0.1) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
    return worst;
}

// Weighted sum with fixed pseudo-random weights; breaks symmetry so every
// output element contributes its own gradient path.
inline float weighted_sum(const std::vector<float>& values, std::uint64_t seed) {
    Rng rng(seed);
    float acc = 0.f;
    for (float v : values) acc += v * rng.uniform(0.5f, 1.5f);
    return acc;
}

inline Tensor weight_tensor(const std::vector<std::int64_t>& shape, std::uint64_t seed) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    Rng rng(seed);
    std::vector<float> w(n);
    for (auto& x : w) x = rng.uniform(0.5f, 1.5f);
    return Tensor(shape, std::move(w), false);
}

}  // namespace dipair::testing
