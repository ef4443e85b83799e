#include "dipair/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dipair::kernels {

namespace {

thread_local std::uint64_t g_macs = 0;
int g_threads = 0;

int resolve_threads() {
    if (g_threads > 0) return g_threads;
    if (const char* env = std::getenv("DIPAIR_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// Shared per-row inner loops. Serial and parallel variants both call these,
// which pins the summation order and keeps the two paths bit-identical.

inline void gemm_nn_row(const float* __restrict__ a, const float* __restrict__ b,
                        float* __restrict__ c, std::size_t n, std::size_t k) {
    for (std::size_t p = 0; p < k; ++p) {
        const float av = a[p];
        const float* __restrict__ brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

// Dot product with four independent accumulators; the combine order
// ((a0+a1)+(a2+a3))+tail is part of the kernel contract.
inline float dot(const float* __restrict__ x, const float* __restrict__ y, std::size_t k) {
    float a0 = 0.f, a1 = 0.f, a2 = 0.f, a3 = 0.f;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
        a0 += x[p] * y[p];
        a1 += x[p + 1] * y[p + 1];
        a2 += x[p + 2] * y[p + 2];
        a3 += x[p + 3] * y[p + 3];
    }
    float acc = (a0 + a1) + (a2 + a3);
    for (; p < k; ++p) acc += x[p] * y[p];
    return acc;
}

inline void gemm_tn_row(const float* __restrict__ a, const float* __restrict__ b,
                        float* __restrict__ c, std::size_t m, std::size_t n,
                        std::size_t k, std::size_t row) {
    // c row `row` of the k x n output: sum over m of A[i,row] * B[i,:]
    for (std::size_t i = 0; i < m; ++i) {
        const float av = a[i * k + row];
        const float* __restrict__ brow = b + i * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void softmax_row(float* __restrict__ x, std::size_t cols) {
    float mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    float sum = 0.f;
    for (std::size_t j = 0; j < cols; ++j) {
        x[j] = std::exp(x[j] - mx);
        sum += x[j];
    }
    const float inv = 1.f / sum;
    for (std::size_t j = 0; j < cols; ++j) x[j] *= inv;
}

inline void layernorm_row(const float* __restrict__ x, const float* __restrict__ g,
                          const float* __restrict__ b, float* __restrict__ y,
                          float* mean_out, float* inv_std_out, std::size_t cols, float eps) {
    float mean = 0.f;
    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<float>(cols);
    float var = 0.f;
    for (std::size_t j = 0; j < cols; ++j) {
        const float d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<float>(cols);
    const float inv_std = 1.f / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * inv_std * g[j] + b[j];
    *mean_out = mean;
    *inv_std_out = inv_std;
}

inline float gelu_one(float v) {
    return 0.5f * v * (1.f + std::erff(v * 0.70710678f));
}

}  // namespace

void set_threads(int n) { g_threads = n; }
int threads() { return resolve_threads(); }

std::uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }

void gemm_nn_serial(const float* a, const float* b, float* c,
                    std::size_t m, std::size_t n, std::size_t k) {
    g_macs += static_cast<std::uint64_t>(m) * n * k;
    for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a + i * k, b, c + i * n, n, k);
}

void gemm_nn_parallel(const float* a, const float* b, float* c,
                      std::size_t m, std::size_t n, std::size_t k) {
    g_macs += static_cast<std::uint64_t>(m) * n * k;
    const int nt = resolve_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i)
        gemm_nn_row(a + i * k, b, c + i * n, n, k);
    (void)nt;
}

void gemm_nn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k) {
    if (threads() > 1 && m > 1 && m * n * k >= 1u << 14)
        gemm_nn_parallel(a, b, c, m, n, k);
    else
        gemm_nn_serial(a, b, c, m, n, k);
}

void gemm_nt_serial(const float* a, const float* b, float* c,
                    std::size_t m, std::size_t n, std::size_t k) {
    g_macs += static_cast<std::uint64_t>(m) * n * k;
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += dot(arow, b + j * k, k);
    }
}

void gemm_nt_parallel(const float* a, const float* b, float* c,
                      std::size_t m, std::size_t n, std::size_t k) {
    g_macs += static_cast<std::uint64_t>(m) * n * k;
    const int nt = resolve_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += dot(arow, b + j * k, k);
    }
    (void)nt;
}

void gemm_nt(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k) {
    if (threads() > 1 && m > 1 && m * n * k >= 1u << 14)
        gemm_nt_parallel(a, b, c, m, n, k);
    else
        gemm_nt_serial(a, b, c, m, n, k);
}

void gemm_tn_serial(const float* a, const float* b, float* c,
                    std::size_t m, std::size_t n, std::size_t k) {
    g_macs += static_cast<std::uint64_t>(m) * n * k;
    for (std::size_t r = 0; r < k; ++r) gemm_tn_row(a, b, c + r * n, m, n, k, r);
}

void gemm_tn_parallel(const float* a, const float* b, float* c,
                      std::size_t m, std::size_t n, std::size_t k) {
    g_macs += static_cast<std::uint64_t>(m) * n * k;
    const int nt = resolve_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
    for (std::int64_t r = 0; r < static_cast<std::int64_t>(k); ++r)
        gemm_tn_row(a, b, c + r * n, m, n, k, r);
    (void)nt;
}

void gemm_tn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k) {
    if (threads() > 1 && k > 1 && m * n * k >= 1u << 14)
        gemm_tn_parallel(a, b, c, m, n, k);
    else
        gemm_tn_serial(a, b, c, m, n, k);
}

void softmax_rows_serial(float* x, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) softmax_row(x + i * cols, cols);
}

void softmax_rows_parallel(float* x, std::size_t rows, std::size_t cols) {
    const int nt = resolve_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(rows); ++i)
        softmax_row(x + i * cols, cols);
    (void)nt;
}

void softmax_rows(float* x, std::size_t rows, std::size_t cols) {
    if (threads() > 1 && rows > 1 && rows * cols >= 1u << 12)
        softmax_rows_parallel(x, rows, cols);
    else
        softmax_rows_serial(x, rows, cols);
}

void layernorm_rows_serial(const float* x, const float* gain, const float* bias,
                           float* y, float* mean, float* inv_std,
                           std::size_t rows, std::size_t cols, float eps) {
    for (std::size_t i = 0; i < rows; ++i)
        layernorm_row(x + i * cols, gain, bias, y + i * cols, mean + i, inv_std + i, cols, eps);
}

void layernorm_rows_parallel(const float* x, const float* gain, const float* bias,
                             float* y, float* mean, float* inv_std,
                             std::size_t rows, std::size_t cols, float eps) {
    const int nt = resolve_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(rows); ++i)
        layernorm_row(x + i * cols, gain, bias, y + i * cols, mean + i, inv_std + i, cols, eps);
    (void)nt;
}

void layernorm_rows(const float* x, const float* gain, const float* bias,
                    float* y, float* mean, float* inv_std,
                    std::size_t rows, std::size_t cols, float eps) {
    if (threads() > 1 && rows > 1 && rows * cols >= 1u << 12)
        layernorm_rows_parallel(x, gain, bias, y, mean, inv_std, rows, cols, eps);
    else
        layernorm_rows_serial(x, gain, bias, y, mean, inv_std, rows, cols, eps);
}

void gelu_serial(const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

void gelu_parallel(const float* x, float* y, std::size_t n) {
    const int nt = resolve_threads();
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static)
#endif
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) y[i] = gelu_one(x[i]);
    (void)nt;
}

void gelu(const float* x, float* y, std::size_t n) {
    if (threads() > 1 && n >= 1u << 14)
        gelu_parallel(x, y, n);
    else
        gelu_serial(x, y, n);
}

}  // namespace dipair::kernels
