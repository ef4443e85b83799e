#include <doctest.h>

#include <cmath>

#include "dipair/tensor.hpp"
#include "helpers.hpp"

using namespace dipair;
using namespace dipair::testing;

namespace {

// Analytic vs central-difference gradient for a scalar objective built by
// `forward` from a single differentiable input.
void check_gradient(Tensor x, const std::function<Tensor()>& forward, double tol = 1e-2,
                    float h = 1e-3f) {
    x.clear_grad();
    Tensor w;
    {
        Tensor out = forward();
        w = weight_tensor(out.shape(), 99);
        Tensor loss = sum(mul(out, w));
        loss.backward();
    }
    auto eval = [&]() {
        Tensor out = forward();
        return sum(mul(out, w)).item();
    };
    const auto numeric = finite_difference_grad(x, eval, h);
    CHECK(max_relative_error(x.grad(), numeric) < tol);
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 2}, {3, 4, 5, 6});
    Tensor c = matmul(eye, b);
    CHECK(c.data() == b.data());
}

TEST_CASE("matmul hand example") {
    Tensor a({1, 2}, {1, 2});
    Tensor b({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == doctest::Approx(11.f));
}

TEST_CASE("matmul gradient matches the hand result and finite differences") {
    Tensor a({2, 2}, {1, 2, 3, 4}, true);
    Tensor b({2, 2}, {1, 1, 1, 1});
    sum(matmul(a, b)).backward();
    const std::vector<float> expect{2, 2, 2, 2};
    CHECK(a.grad() == expect);

    auto eval = [&]() { return sum(matmul(a, b)).item(); };
    const auto numeric = finite_difference_grad(a, eval);
    CHECK(max_relative_error(a.grad(), numeric) < 1e-2);
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor a({2, 3}, std::vector<float>(6, 0.f));
    Tensor b({2, 2}, std::vector<float>(4, 0.f));
    try {
        matmul(a, b);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[2,2]") != std::string::npos);
    }
}

TEST_CASE("softmax examples") {
    Tensor x({3}, {0, 0, 0});
    for (float v : softmax(x, 0).data()) CHECK(v == doctest::Approx(1.f / 3));

    Tensor big({2}, {1000, 0});
    auto y = softmax(big, 0).data();
    CHECK(y[0] == doctest::Approx(1.f));
    CHECK(y[1] == doctest::Approx(0.f));
    CHECK(std::isfinite(y[0]));

    Tensor z({2}, {1, 2});
    auto s = softmax(z, 0).data();
    CHECK(s[0] == doctest::Approx(0.26894).epsilon(1e-4));
    CHECK(s[1] == doctest::Approx(0.73106).epsilon(1e-4));

    CHECK_THROWS_AS(softmax(z, 3), ShapeError);
}

TEST_CASE("softmax rows sum to one on random tensors") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor({3, 4, 5}, rng, false, -5.f, 5.f);
        const int axis = static_cast<int>(rng.uniform_int(0, 2));
        Tensor y = softmax(x, axis);
        // Sum along the softmax axis must be 1 everywhere.
        const auto& shape = x.shape();
        std::int64_t outer = 1, inner = 1, len = shape[axis];
        for (int i = 0; i < axis; ++i) outer *= shape[i];
        for (int i = axis + 1; i < 3; ++i) inner *= shape[i];
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                float s = 0.f;
                for (std::int64_t j = 0; j < len; ++j)
                    s += y.data()[o * len * inner + j * inner + in];
                CHECK(s == doctest::Approx(1.f).epsilon(1e-5));
            }
    }
}

TEST_CASE("layernorm examples") {
    Tensor gain({4}, {1, 1, 1, 1});
    Tensor bias({4}, {0, 0, 0, 0});
    Tensor constant({1, 4}, {7, 7, 7, 7});
    for (float v : layernorm(constant, gain, bias).data()) CHECK(v == doctest::Approx(0.f));

    Tensor g2({2}, {1, 1}), b2({2}, {0, 0});
    Tensor x({1, 2}, {1, 3});
    auto y = layernorm(x, g2, b2).data();
    CHECK(y[0] == doctest::Approx(-1.f).epsilon(1e-5));
    CHECK(y[1] == doctest::Approx(1.f).epsilon(1e-5));
}

TEST_CASE("layernorm gradient vs finite differences") {
    Rng rng(11);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor gain = random_tensor({6}, rng, false, 0.5f, 1.5f);
    Tensor bias = random_tensor({6}, rng, false);
    check_gradient(x, [&]() { return layernorm(x, gain, bias); }, 1e-3, 1e-2f);

    // Gain and bias gradients too.
    Tensor g = random_tensor({6}, rng, true, 0.5f, 1.5f);
    check_gradient(g, [&]() { return layernorm(x, g, bias); }, 1e-3, 1e-2f);
}

TEST_CASE("backward basics") {
    Tensor w({3}, {1, 2, 3}, true);
    sum(w).backward();
    CHECK(w.grad() == std::vector<float>{1, 1, 1});

    Tensor v({3}, {1, 2, 3}, true);
    sum(mul(v, v)).backward();
    CHECK(v.grad() == std::vector<float>{2, 4, 6});
}

TEST_CASE("backward requires a scalar") {
    Tensor w({2}, {1, 2}, true);
    Tensor y = mul(w, w);
    CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("non-participating tensors keep zero gradients") {
    Tensor used({2}, {1, 2}, true);
    Tensor unused({2}, {3, 4}, true);
    sum(mul(used, used)).backward();
    CHECK(unused.grad() == std::vector<float>{0, 0});
}

TEST_CASE("gradient additivity over independent subgraphs") {
    Rng rng(21);
    Tensor a = random_tensor({4}, rng);
    Tensor b = random_tensor({4}, rng);

    Tensor joint_loss = add(sum(mul(a, a)), sum(gelu(b)));
    joint_loss.backward();
    const auto ga = a.grad();
    const auto gb = b.grad();

    a.clear_grad();
    b.clear_grad();
    sum(mul(a, a)).backward();
    sum(gelu(b)).backward();
    CHECK(a.grad() == ga);
    CHECK(b.grad() == gb);
}

TEST_CASE("per-op gradients match finite differences") {
    Rng rng(31);

    SUBCASE("matmul 2d") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng, false);
        check_gradient(a, [&]() { return matmul(a, b); });
        Tensor b2 = random_tensor({4, 2}, rng);
        check_gradient(b2, [&]() { return matmul(a, b2); });
    }
    SUBCASE("matmul batched") {
        Tensor a = random_tensor({2, 3, 4}, rng);
        Tensor w = random_tensor({4, 2}, rng);
        check_gradient(a, [&]() { return matmul(a, w); });
        check_gradient(w, [&]() { return matmul(a, w); });
        Tensor b = random_tensor({2, 4, 2}, rng);
        check_gradient(b, [&]() { return matmul(a, b); });
    }
    SUBCASE("matmul_nt") {
        Tensor a = random_tensor({2, 3, 4}, rng);
        Tensor b = random_tensor({2, 5, 4}, rng);
        check_gradient(a, [&]() { return matmul_nt(a, b); });
        check_gradient(b, [&]() { return matmul_nt(a, b); });
    }
    SUBCASE("elementwise and reductions") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng, false);
        check_gradient(a, [&]() { return add(a, b); });
        check_gradient(a, [&]() { return sub(a, b); });
        check_gradient(a, [&]() { return mul(a, b); });
        check_gradient(a, [&]() { return scale(a, 1.7f); });
        check_gradient(a, [&]() { return mean(a); });
        Tensor bias = random_tensor({4}, rng);
        check_gradient(bias, [&]() { return add_bias(a, bias); });
    }
    SUBCASE("activations") {
        Tensor a = random_tensor({3, 4}, rng, true, -2.f, 2.f);
        check_gradient(a, [&]() { return gelu(a); });
        check_gradient(a, [&]() { return sigmoid(a); });
        check_gradient(a, [&]() { return softmax(a, -1); });
    }
    SUBCASE("shape ops") {
        Tensor a = random_tensor({2, 5, 3}, rng);
        check_gradient(a, [&]() { return slice_rows(a, 1, 3); });
        check_gradient(a, [&]() { return reshape(a, {5, 6}); });
        Tensor b = random_tensor({2, 2, 3}, rng, false);
        check_gradient(a, [&]() { return concat_rows(a, b); });
        Tensor h = random_tensor({2, 3, 4}, rng);
        check_gradient(h, [&]() { return join_heads(split_heads(h, 2), 2); });
    }
    SUBCASE("embedding") {
        Tensor table = random_tensor({6, 3}, rng);
        const std::vector<std::int32_t> ids{0, 5, 2, 2};
        check_gradient(table, [&]() { return embedding(table, ids, {2, 2}); });
    }
    SUBCASE("cosine") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        check_gradient(a, [&]() { return cosine_rows(a, b); });
        check_gradient(b, [&]() { return cosine_rows(a, b); });
    }
    SUBCASE("bce with logits") {
        Tensor z = random_tensor({5}, rng, true, -2.f, 2.f);
        const std::vector<float> y{0.f, 1.f, 0.5f, 0.25f, 0.9f};
        check_gradient(z, [&]() { return bce_with_logits(z, y); });
    }
}

TEST_CASE("embedding rejects out-of-range ids") {
    Tensor table({4, 2}, std::vector<float>(8, 0.f));
    CHECK_THROWS_AS(embedding(table, {0, 4}, {2}), VocabError);
}

TEST_CASE("cosine handles zero-norm rows by scoring zero") {
    Tensor a({1, 3}, {0, 0, 0}, true);
    Tensor b({1, 3}, {1, 2, 3});
    Tensor c = cosine_rows(a, b);
    CHECK(c.data()[0] == 0.f);
    sum(c).backward();
    CHECK(a.grad() == std::vector<float>{0, 0, 0});
}

TEST_CASE("bce rejects labels outside the unit interval") {
    Tensor z({1}, {0.f});
    CHECK_THROWS_AS(bce_with_logits(z, {1.5f}), ContractError);
}

TEST_CASE("no-grad guard suppresses graph recording") {
    Tensor a({2}, {1, 2}, true);
    NoGradGuard ng;
    Tensor y = mul(a, a);
    CHECK_FALSE(y.requires_grad());
}
