#include <doctest.h>

#include <cmath>

#include "dipair/transformer.hpp"
#include "helpers.hpp"

using namespace dipair;
using namespace dipair::testing;

namespace {

TransformerConfig tiny_config() {
    TransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_size = 16;
    cfg.num_heads = 2;
    cfg.intermediate_size = 32;
    cfg.max_sequence_length = 12;
    cfg.vocab_size = 32;
    return cfg;
}

TokenSequence make_seq(std::vector<std::int32_t> content, int padded_len) {
    TokenSequence seq;
    seq.token_ids.push_back(tokens::kCls);
    seq.token_ids.insert(seq.token_ids.end(), content.begin(), content.end());
    const std::size_t real = seq.token_ids.size();
    seq.token_ids.resize(padded_len, tokens::kPad);
    seq.segment_ids.assign(padded_len, 0);
    seq.attention_mask.assign(padded_len, 0);
    for (std::size_t i = 0; i < real; ++i) seq.attention_mask[i] = 1;
    return seq;
}

}  // namespace

TEST_CASE("config validation") {
    TransformerConfig cfg = tiny_config();
    cfg.hidden_size = 15;  // not divisible by 2 heads
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.vocab_size = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("token sequence invariants") {
    TokenSequence ok = make_seq({5, 6}, 6);
    validate_token_sequence(ok);

    TokenSequence no_cls = ok;
    no_cls.token_ids[0] = 7;
    CHECK_THROWS_AS(validate_token_sequence(no_cls), ContractError);

    TokenSequence holey = ok;
    holey.attention_mask = {1, 0, 1, 0, 0, 0};
    CHECK_THROWS_AS(validate_token_sequence(holey), ContractError);
}

TEST_CASE("embed with zeroed tables maps every row to the same vector") {
    ParameterStore store;
    Rng rng(1);
    EmbeddingTables tables = make_embedding_tables(store, "emb.", 32, 12, 2, 16, rng);
    for (auto& p : store.all())
        if (p.name != "emb.ln_gain") std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.f);

    TokenBatch batch = pack_batch({make_seq({5, 6, 7}, 8)});
    Tensor out = embed_tokens(batch, tables);
    // layernorm of a zero-variance row is the bias: all rows equal.
    for (std::int64_t t = 1; t < 8; ++t)
        for (std::int64_t j = 0; j < 16; ++j)
            CHECK(out.data()[t * 16 + j] == out.data()[j]);
}

TEST_CASE("embed is a local lookup: swapping tokens swaps exactly those rows") {
    ParameterStore store;
    Rng rng(2);
    EmbeddingTables tables = make_embedding_tables(store, "emb.", 32, 12, 2, 16, rng);
    TokenBatch a = pack_batch({make_seq({5, 6, 9}, 8)});
    TokenBatch b = pack_batch({make_seq({5, 9, 6}, 8)});
    // Compare pre-layernorm sums at fixed positions: token+pos+segment.
    Tensor ea = embedding(tables.token, a.token_ids, {8});
    Tensor eb = embedding(tables.token, b.token_ids, {8});
    for (std::int64_t t = 0; t < 8; ++t) {
        const bool swapped = t == 2 || t == 3;
        for (std::int64_t j = 0; j < 16; ++j) {
            if (swapped)
                CHECK(ea.data()[t * 16 + j] != eb.data()[t * 16 + j]);
            else
                CHECK(ea.data()[t * 16 + j] == eb.data()[t * 16 + j]);
        }
    }
}

TEST_CASE("embed recovers one-hot constructed rows") {
    // One-hot token table: row of token t has 1 at column t % hidden.
    const int hidden = 16, vocab = 16;
    ParameterStore store;
    Tensor token = store.add("token", Tensor::zeros({vocab, hidden}));
    for (int t = 0; t < vocab; ++t) token.data()[t * hidden + t] = 1.f;
    EmbeddingTables tables;
    tables.token = token;
    tables.position = store.add("position", Tensor::zeros({4, hidden}));
    tables.segment = store.add("segment", Tensor::zeros({2, hidden}));
    tables.ln_gain = store.add("ln_gain", Tensor::full({hidden}, 1.f));
    tables.ln_bias = store.add("ln_bias", Tensor::zeros({hidden}));

    TokenSequence seq;
    seq.token_ids = {1, 7};  // CLS id 1 and one content token
    seq.segment_ids = {0, 0};
    seq.attention_mask = {1, 1};
    TokenBatch batch = pack_batch({seq});
    Tensor out = embed_tokens(batch, tables);
    // The argmax of each row inverts the lookup.
    for (std::int64_t t = 0; t < 2; ++t) {
        std::int64_t argmax = 0;
        for (std::int64_t j = 1; j < hidden; ++j)
            if (out.data()[t * hidden + j] > out.data()[t * hidden + argmax]) argmax = j;
        CHECK(argmax == seq.token_ids[t]);
    }
}

TEST_CASE("attention over a single token is its value projection") {
    ParameterStore store;
    Rng rng(3);
    EncoderLayerWeights layer = make_encoder_layer(store, "l0.", 16, 32, rng);
    Tensor x = random_tensor({1, 1, 16}, rng, false);
    std::vector<std::uint8_t> mask{1};
    Tensor out = self_attention(x, mask, layer.attn, 2);

    // softmax over one element is 1, so attention reduces to V then O.
    Tensor v = add_bias(matmul(x, layer.attn.wv), layer.attn.bv);
    Tensor proj = add_bias(matmul(v, layer.attn.wo), layer.attn.bo);
    Tensor expect = layernorm(add(x, proj), layer.attn.ln_gain, layer.attn.ln_bias);
    for (std::int64_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-6));
}

TEST_CASE("identical rows attend uniformly") {
    ParameterStore store;
    Rng rng(4);
    EncoderLayerWeights layer = make_encoder_layer(store, "l0.", 16, 32, rng);
    Tensor row = random_tensor({1, 1, 16}, rng, false);
    std::vector<float> rep;
    for (int i = 0; i < 4; ++i)
        rep.insert(rep.end(), row.data().begin(), row.data().end());
    Tensor x({1, 4, 16}, rep);
    std::vector<std::uint8_t> mask(4, 1);
    Tensor out = self_attention(x, mask, layer.attn, 2);
    // All positions see the same distribution over identical values, so all
    // output rows agree (position information only enters via embeddings).
    for (std::int64_t t = 1; t < 4; ++t)
        for (std::int64_t j = 0; j < 16; ++j)
            CHECK(out.data()[t * 16 + j] == doctest::Approx(out.data()[j]).epsilon(1e-5));
}

TEST_CASE("two-token attention matches a hand computation") {
    // Hidden 2, one head. Hand-set weights, identity-ish.
    ParameterStore store;
    AttentionWeights w;
    w.wq = store.add("wq", Tensor({2, 2}, {1, 0, 0, 1}));
    w.bq = store.add("bq", Tensor::zeros({2}));
    w.wk = store.add("wk", Tensor({2, 2}, {1, 0, 0, 1}));
    w.bk = store.add("bk", Tensor::zeros({2}));
    w.wv = store.add("wv", Tensor({2, 2}, {1, 0, 0, 1}));
    w.bv = store.add("bv", Tensor::zeros({2}));
    w.wo = store.add("wo", Tensor({2, 2}, {1, 0, 0, 1}));
    w.bo = store.add("bo", Tensor::zeros({2}));
    w.ln_gain = store.add("g", Tensor::full({2}, 1.f));
    w.ln_bias = store.add("b", Tensor::zeros({2}));

    Tensor x({1, 2, 2}, {1, 0, 0, 1});
    std::vector<std::uint8_t> mask{1, 1};
    Tensor out = self_attention(x, mask, w, 1);

    // scores/sqrt(2): row0 = [1,0]/r2, softmax -> [s, 1-s], s = e^{1/r2}/(e^{1/r2}+1)
    const float r2 = std::sqrt(2.f);
    const float s = std::exp(1.f / r2) / (std::exp(1.f / r2) + 1.f);
    // context row0 = s*[1,0] + (1-s)*[0,1]; residual adds [1,0].
    const float pre0 = 1.f + s, pre1 = 1.f - s;
    const float mu = 0.5f * (pre0 + pre1);
    const float var = 0.5f * ((pre0 - mu) * (pre0 - mu) + (pre1 - mu) * (pre1 - mu));
    const float istd = 1.f / std::sqrt(var + 1e-12f);
    CHECK(out.data()[0] == doctest::Approx((pre0 - mu) * istd).epsilon(1e-5));
    CHECK(out.data()[1] == doctest::Approx((pre1 - mu) * istd).epsilon(1e-5));
}

TEST_CASE("zero-layer stack is the identity on the embedded sequence") {
    ParameterStore store;
    Rng rng(5);
    TransformerConfig cfg = tiny_config();
    cfg.num_layers = 0;
    TransformerEncoder enc(cfg, store, "encoder.", rng);
    TokenBatch batch = pack_batch({make_seq({4, 5}, 6)});
    Tensor embedded = enc.embed(batch);
    Tensor out = enc.encode_embedded(embedded, batch.mask);
    CHECK(out.data() == embedded.data());
}

TEST_CASE("stack preserves shape") {
    ParameterStore store;
    Rng rng(6);
    TransformerEncoder enc(tiny_config(), store, "encoder.", rng);
    TokenBatch batch = pack_batch({make_seq({4, 5, 6}, 9), make_seq({7}, 9)});
    EmbeddedSequence out = enc.forward(batch);
    CHECK(out.embeddings.shape() == std::vector<std::int64_t>{2, 9, 16});
}

TEST_CASE("padding never influences real positions") {
    ParameterStore store;
    Rng rng(7);
    TransformerEncoder enc(tiny_config(), store, "encoder.", rng);
    TokenSequence short_seq = make_seq({4, 5, 6}, 5);
    TokenSequence long_seq = make_seq({4, 5, 6}, 9);  // extra padding appended
    Tensor a = enc.forward(pack_batch({short_seq})).embeddings;
    Tensor b = enc.forward(pack_batch({long_seq})).embeddings;
    for (std::int64_t t = 0; t < 4; ++t)  // CLS + 3 real tokens
        for (std::int64_t j = 0; j < 16; ++j)
            CHECK(a.data()[t * 16 + j] ==
                  doctest::Approx(b.data()[t * 16 + j]).epsilon(1e-5));
}

TEST_CASE("attention weights sum to one over unmasked keys") {
    // Checked indirectly: for masked keys the post-softmax weight is exactly
    // zero, so value rows at padded positions cannot leak in. Scoring the
    // same content against two padded widths (above) pins the invariant;
    // here we check a direct softmax property on a masked score tensor.
    Rng rng(8);
    Tensor scores = random_tensor({2, 3, 4}, rng, false, -2.f, 2.f);
    std::vector<std::uint8_t> mask{1, 1, 0, 0, 1, 1, 1, 0};
    Tensor attn = softmax(add_key_mask(scores, mask, 1), -1);
    for (std::int64_t g = 0; g < 2; ++g)
        for (std::int64_t q = 0; q < 3; ++q) {
            float total = 0.f, masked = 0.f;
            for (std::int64_t k = 0; k < 4; ++k) {
                const float w = attn.data()[(g * 3 + q) * 4 + k];
                total += w;
                if (!mask[g * 4 + k]) masked += w;
            }
            CHECK(total == doctest::Approx(1.f).epsilon(1e-5));
            CHECK(masked == 0.f);
        }
}

TEST_CASE("stack is permutation-equivariant with zeroed position table") {
    ParameterStore store;
    Rng rng(9);
    TransformerConfig cfg = tiny_config();
    TransformerEncoder enc(cfg, store, "encoder.", rng);
    std::fill(store.at("encoder.embeddings.position").tensor.data().begin(),
              store.at("encoder.embeddings.position").tensor.data().end(), 0.f);

    TokenSequence a = make_seq({4, 5, 6}, 4);
    TokenSequence b = make_seq({6, 4, 5}, 4);  // permuted content, CLS fixed
    Tensor oa = enc.forward(pack_batch({a})).embeddings;
    Tensor ob = enc.forward(pack_batch({b})).embeddings;
    // Row for token 4 moved from position 1 to position 2, etc.
    const int perm[4] = {0, 2, 3, 1};  // a-position -> b-position
    for (int t = 0; t < 4; ++t)
        for (int j = 0; j < 16; ++j)
            CHECK(oa.data()[t * 16 + j] ==
                  doctest::Approx(ob.data()[perm[t] * 16 + j]).epsilon(1e-5));
}
