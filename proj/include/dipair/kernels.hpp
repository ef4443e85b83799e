#pragma once
#include <cstddef>
#include <cstdint>

// Dense float kernels behind the tensor ops. Every kernel has a serial
// reference implementation and an OpenMP variant; both compute each output
// element with the same summation order, so results are bit-identical and
// the serial build stays a valid oracle for the parallel one.
namespace dipair::kernels {

// 0 = resolve from DIPAIR_THREADS / OMP runtime.
void set_threads(int n);
int threads();

// Multiply-accumulate counter (1 MAC = 1 multiply + 1 add), used by the
// FLOP-consistency checks. Thread-local, always on.
std::uint64_t mac_count();
void reset_mac_count();

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn_serial(const float* a, const float* b, float* c,
                    std::size_t m, std::size_t n, std::size_t k);
void gemm_nn_parallel(const float* a, const float* b, float* c,
                      std::size_t m, std::size_t n, std::size_t k);
void gemm_nn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k);

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt_serial(const float* a, const float* b, float* c,
                    std::size_t m, std::size_t n, std::size_t k);
void gemm_nt_parallel(const float* a, const float* b, float* c,
                      std::size_t m, std::size_t n, std::size_t k);
void gemm_nt(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k);

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn_serial(const float* a, const float* b, float* c,
                    std::size_t m, std::size_t n, std::size_t k);
void gemm_tn_parallel(const float* a, const float* b, float* c,
                      std::size_t m, std::size_t n, std::size_t k);
void gemm_tn(const float* a, const float* b, float* c,
             std::size_t m, std::size_t n, std::size_t k);

// Row-wise stabilized softmax over the last dimension, in place.
void softmax_rows_serial(float* x, std::size_t rows, std::size_t cols);
void softmax_rows_parallel(float* x, std::size_t rows, std::size_t cols);
void softmax_rows(float* x, std::size_t rows, std::size_t cols);

// Row-wise layer normalization: y = (x - mean) / sqrt(var + eps) * g + b.
// Also emits per-row mean and inverse stddev for the backward pass.
void layernorm_rows_serial(const float* x, const float* gain, const float* bias,
                           float* y, float* mean, float* inv_std,
                           std::size_t rows, std::size_t cols, float eps);
void layernorm_rows_parallel(const float* x, const float* gain, const float* bias,
                             float* y, float* mean, float* inv_std,
                             std::size_t rows, std::size_t cols, float eps);
void layernorm_rows(const float* x, const float* gain, const float* bias,
                    float* y, float* mean, float* inv_std,
                    std::size_t rows, std::size_t cols, float eps);

// y = gelu(x), exact erf form.
void gelu_serial(const float* x, float* y, std::size_t n);
void gelu_parallel(const float* x, float* y, std::size_t n);
void gelu(const float* x, float* y, std::size_t n);

}  // namespace dipair::kernels
