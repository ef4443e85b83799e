#include <doctest.h>

#include "dipair/checkpoint.hpp"
#include "dipair/optimizer.hpp"
#include "helpers.hpp"

using namespace dipair;
using namespace dipair::testing;

namespace {

AdamWConfig no_warmup(float lr, float wd = 0.f) {
    AdamWConfig cfg;
    cfg.learning_rate = lr;
    cfg.weight_decay = wd;
    cfg.warmup_steps = 0;
    return cfg;
}

}  // namespace

TEST_CASE("single-step adamw with bias correction moves by ~lr") {
    ParameterStore store;
    Tensor w = store.add("w", Tensor::scalar(1.f));
    w.node()->ensure_grad();
    w.node()->grad[0] = 1.f;
    AdamW opt(no_warmup(0.1f));
    opt.step(store);
    CHECK(w.item() == doctest::Approx(0.9f).epsilon(1e-4));
}

TEST_CASE("frozen parameters receive no update") {
    ParameterStore store;
    Tensor w = store.add("encoder.w", Tensor::scalar(2.f));
    Tensor h = store.add("head.w", Tensor::scalar(2.f));
    store.set_frozen_by_prefixes({"encoder."}, true);
    w.node()->ensure_grad();
    w.node()->grad[0] = 5.f;
    h.node()->ensure_grad();
    h.node()->grad[0] = 5.f;
    AdamW opt(no_warmup(0.1f));
    opt.step(store);
    CHECK(w.item() == 2.f);        // bit-identical
    CHECK(h.item() != 2.f);
    CHECK_FALSE(w.has_grad());     // grads cleared after the step
}

TEST_CASE("decay-only path shrinks by exactly (1 - lr*wd)") {
    ParameterStore store;
    Tensor w = store.add("w", Tensor::scalar(1.f));
    w.node()->ensure_grad();  // populated zero gradient
    AdamW opt(no_warmup(0.1f, 0.01f));
    opt.step(store);
    CHECK(w.item() == doctest::Approx(1.f - 0.001f).epsilon(1e-7));
}

TEST_CASE("step without populated gradients is a contract error") {
    ParameterStore store;
    store.add("w", Tensor::scalar(1.f));
    AdamW opt(no_warmup(0.1f));
    CHECK_THROWS_AS(opt.step(store), ContractError);
}

TEST_CASE("warmup scales the learning rate linearly") {
    AdamWConfig cfg;
    cfg.learning_rate = 1.f;
    cfg.warmup_steps = 100;
    AdamW opt(cfg);
    CHECK(opt.effective_lr(1) == doctest::Approx(0.01f));
    CHECK(opt.effective_lr(50) == doctest::Approx(0.5f));
    CHECK(opt.effective_lr(100) == doctest::Approx(1.f));
    CHECK(opt.effective_lr(500) == doctest::Approx(1.f));
}

TEST_CASE("identical seeds give bit-identical trajectories") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        ParameterStore store;
        Tensor w = store.add("w", random_tensor({8}, rng));
        AdamW opt(no_warmup(0.05f, 0.01f));
        for (int step = 0; step < 20; ++step) {
            Tensor x = random_tensor({8}, rng, false);
            sum(mul(w, x)).backward();
            opt.step(store);
        }
        return w.data();
    };
    CHECK(run(7) == run(7));
    CHECK(run(7) != run(8));
}

TEST_CASE("freeze prefix must resolve to parameters") {
    ParameterStore store;
    store.add("encoder.w", Tensor::scalar(1.f));
    CHECK_THROWS_AS(store.set_frozen_by_prefixes({"nonexistent."}, true), ConfigError);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    Rng rng(3);
    ParameterStore store;
    Tensor a = store.add("layer.weight", random_tensor({4, 3}, rng));
    Tensor b = store.add("layer.bias", random_tensor({3}, rng));
    const auto va = a.data();
    const auto vb = b.data();
    const std::string path = "test_ckpt.dpwt";
    save_checkpoint(store, path);

    // Perturb, reload, compare bits.
    a.data()[0] += 1.f;
    b.data()[2] -= 1.f;
    load_checkpoint(store, path);
    CHECK(a.data() == va);
    CHECK(b.data() == vb);

    std::remove(path.c_str());
}
