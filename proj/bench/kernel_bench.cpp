// Throughput comparison of the serial reference kernels against their
// OpenMP variants, on the shapes the models actually run.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

#include "dipair/kernels.hpp"

using namespace dipair;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& gen) {
    std::uniform_real_distribution<float> d(-1.f, 1.f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(gen);
    return v;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

void bench_gemm(std::size_t m, std::size_t n, std::size_t k, int reps) {
    std::mt19937_64 gen(7);
    const std::vector<float> a = random_vec(m * k, gen);
    const std::vector<float> b = random_vec(k * n, gen);
    std::vector<float> c(m * n, 0.f);

    const double flops = 2.0 * m * n * k;
    const double ts = time_best_of(reps, [&] {
        std::fill(c.begin(), c.end(), 0.f);
        kernels::gemm_nn_serial(a.data(), b.data(), c.data(), m, n, k);
    });
    const double tp = time_best_of(reps, [&] {
        std::fill(c.begin(), c.end(), 0.f);
        kernels::gemm_nn_parallel(a.data(), b.data(), c.data(), m, n, k);
    });
    std::printf("gemm_nn %4zux%4zux%4zu  serial %8.2f GFLOP/s  omp %8.2f GFLOP/s  speedup %.2fx\n",
                m, n, k, flops / ts / 1e9, flops / tp / 1e9, ts / tp);
}

void bench_rows(std::size_t rows, std::size_t cols, int reps) {
    std::mt19937_64 gen(11);
    std::vector<float> x = random_vec(rows * cols, gen);
    std::vector<float> gain(cols, 1.f), bias(cols, 0.f);
    std::vector<float> y(rows * cols), mean(rows), istd(rows);

    const double ts_sm = time_best_of(reps, [&] {
        std::vector<float> tmp = x;
        kernels::softmax_rows_serial(tmp.data(), rows, cols);
    });
    const double tp_sm = time_best_of(reps, [&] {
        std::vector<float> tmp = x;
        kernels::softmax_rows_parallel(tmp.data(), rows, cols);
    });
    std::printf("softmax %5zux%4zu       serial %8.3f ms        omp %8.3f ms        speedup %.2fx\n",
                rows, cols, ts_sm * 1e3, tp_sm * 1e3, ts_sm / tp_sm);

    const double ts_ln = time_best_of(reps, [&] {
        kernels::layernorm_rows_serial(x.data(), gain.data(), bias.data(), y.data(), mean.data(),
                                       istd.data(), rows, cols, 1e-12f);
    });
    const double tp_ln = time_best_of(reps, [&] {
        kernels::layernorm_rows_parallel(x.data(), gain.data(), bias.data(), y.data(),
                                         mean.data(), istd.data(), rows, cols, 1e-12f);
    });
    std::printf("layernorm %5zux%4zu     serial %8.3f ms        omp %8.3f ms        speedup %.2fx\n",
                rows, cols, ts_ln * 1e3, tp_ln * 1e3, ts_ln / tp_ln);
}

}  // namespace

int main(int argc, char** argv) {
    int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    std::printf("threads: %d\n", kernels::threads());

    // Encoder-shaped GEMMs: (batch*seq, hidden) x (hidden, hidden/intermediate).
    bench_gemm(4096, 128, 128, reps);
    bench_gemm(4096, 512, 128, reps);
    bench_gemm(8192, 64, 64, reps);
    // Head-shaped small GEMM.
    bench_gemm(12 * 64, 64, 64, reps);

    bench_rows(8192, 128, reps);
    bench_rows(512, 512, reps);
    return 0;
}
