#pragma once
#include <cstdint>
#include <random>
#include <vector>

namespace dipair {

// Deterministic RNG used everywhere; seeding is explicit so runs reproduce.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::mt19937_64& engine() { return gen_; }

    float uniform(float lo, float hi) {
        std::uniform_real_distribution<float> d(lo, hi);
        return d(gen_);
    }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
        std::uniform_int_distribution<std::int64_t> d(lo, hi);
        return d(gen_);
    }

    float normal(float stddev) {
        std::normal_distribution<float> d(0.f, stddev);
        return d(gen_);
    }

    // BERT-style init: normal(0, stddev) resampled into [-2s, 2s].
    float trunc_normal(float stddev) {
        for (;;) {
            float v = normal(stddev);
            if (v >= -2.f * stddev && v <= 2.f * stddev) return v;
        }
    }

    void fill_trunc_normal(std::vector<float>& v, float stddev) {
        for (auto& x : v) x = trunc_normal(stddev);
    }

    // Derive an independent stream, e.g. one per model component.
    std::uint64_t fork() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

}  // namespace dipair
