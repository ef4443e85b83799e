#include <doctest.h>

#include <random>
#include <vector>

#include "dipair/kernels.hpp"

using namespace dipair;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<float> d(-2.f, 2.f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(gen);
    return v;
}

}  // namespace

TEST_CASE("serial and parallel kernels are bit-identical") {
    kernels::set_threads(4);
    std::mt19937_64 shapes(123);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = 1 + shapes() % 40, n = 1 + shapes() % 40, k = 1 + shapes() % 40;
        const auto a = random_vec(m * k, trial);
        const auto b = random_vec(k * n, trial + 1000);
        const auto bt = random_vec(n * k, trial + 2000);

        std::vector<float> c1(m * n, 0.f), c2(m * n, 0.f);
        kernels::gemm_nn_serial(a.data(), b.data(), c1.data(), m, n, k);
        kernels::gemm_nn_parallel(a.data(), b.data(), c2.data(), m, n, k);
        CHECK(c1 == c2);

        std::fill(c1.begin(), c1.end(), 0.f);
        std::fill(c2.begin(), c2.end(), 0.f);
        kernels::gemm_nt_serial(a.data(), bt.data(), c1.data(), m, n, k);
        kernels::gemm_nt_parallel(a.data(), bt.data(), c2.data(), m, n, k);
        CHECK(c1 == c2);

        std::vector<float> d1(k * n, 0.f), d2(k * n, 0.f);
        kernels::gemm_tn_serial(a.data(), b.data(), d1.data(), m, n, k);
        kernels::gemm_tn_parallel(a.data(), b.data(), d2.data(), m, n, k);
        CHECK(d1 == d2);

        auto s1 = random_vec(m * n, trial + 3000);
        auto s2 = s1;
        kernels::softmax_rows_serial(s1.data(), m, n);
        kernels::softmax_rows_parallel(s2.data(), m, n);
        CHECK(s1 == s2);

        const auto x = random_vec(m * n, trial + 4000);
        const auto g = random_vec(n, trial + 5000);
        const auto bb = random_vec(n, trial + 6000);
        std::vector<float> y1(m * n), y2(m * n), mu1(m), mu2(m), is1(m), is2(m);
        kernels::layernorm_rows_serial(x.data(), g.data(), bb.data(), y1.data(), mu1.data(),
                                       is1.data(), m, n, 1e-12f);
        kernels::layernorm_rows_parallel(x.data(), g.data(), bb.data(), y2.data(), mu2.data(),
                                         is2.data(), m, n, 1e-12f);
        CHECK(y1 == y2);
    }
    kernels::set_threads(0);
}

TEST_CASE("gemm against a plain triple loop") {
    const std::size_t m = 7, n = 5, k = 9;
    const auto a = random_vec(m * k, 42);
    const auto b = random_vec(k * n, 43);
    std::vector<float> expect(m * n, 0.f);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += (double)a[i * k + p] * b[p * n + j];
            expect[i * n + j] = static_cast<float>(acc);
        }
    std::vector<float> c(m * n, 0.f);
    kernels::gemm_nn(a.data(), b.data(), c.data(), m, n, k);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-5));
}

TEST_CASE("mac counter counts m*n*k per gemm") {
    const auto a = random_vec(6 * 4, 1), b = random_vec(4 * 5, 2);
    std::vector<float> c(6 * 5, 0.f);
    kernels::reset_mac_count();
    kernels::gemm_nn(a.data(), b.data(), c.data(), 6, 5, 4);
    CHECK(kernels::mac_count() == 6 * 5 * 4);
    kernels::gemm_nt(a.data(), a.data(), c.data(), 6, 6, 4);
    CHECK(kernels::mac_count() == 6 * 5 * 4 + 6 * 6 * 4);
    kernels::reset_mac_count();
    CHECK(kernels::mac_count() == 0);
}
