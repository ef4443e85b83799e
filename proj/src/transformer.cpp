#include "dipair/transformer.hpp"

#include <cmath>

#include "dipair/errors.hpp"

namespace dipair {

void TransformerConfig::validate() const {
    if (hidden_size <= 0 || num_heads <= 0 || hidden_size % num_heads != 0)
        throw ConfigError("hidden_size " + std::to_string(hidden_size) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    if (max_sequence_length < 1) throw ConfigError("max_sequence_length must be >= 1");
    if (vocab_size < 4) throw ConfigError("vocab_size must leave room for special tokens");
    if (num_layers < 0) throw ConfigError("num_layers must be >= 0");
    if (intermediate_size <= 0) throw ConfigError("intermediate_size must be positive");
    if (num_segment_types < 1) throw ConfigError("num_segment_types must be >= 1");
}

void validate_token_sequence(const TokenSequence& seq) {
    if (seq.token_ids.size() != seq.segment_ids.size() ||
        seq.token_ids.size() != seq.attention_mask.size())
        throw ContractError("token/segment/mask lengths disagree");
    if (seq.token_ids.empty() || seq.token_ids[0] != tokens::kCls)
        throw ContractError("CLS must occupy position 0");
    bool padding_seen = false;
    for (std::uint8_t m : seq.attention_mask) {
        if (m == 0) padding_seen = true;
        else if (padding_seen)
            throw ContractError("attention mask must be a prefix of ones");
    }
}

TokenBatch pack_batch(const std::vector<TokenSequence>& seqs) {
    if (seqs.empty()) throw ContractError("cannot pack an empty batch");
    TokenBatch b;
    b.batch = static_cast<std::int64_t>(seqs.size());
    b.seq_len = static_cast<std::int64_t>(seqs[0].length());
    b.token_ids.reserve(b.batch * b.seq_len);
    for (const auto& s : seqs) {
        if (static_cast<std::int64_t>(s.length()) != b.seq_len)
            throw ContractError("batch sequences must share one padded length");
        b.token_ids.insert(b.token_ids.end(), s.token_ids.begin(), s.token_ids.end());
        b.segment_ids.insert(b.segment_ids.end(), s.segment_ids.begin(), s.segment_ids.end());
        b.mask.insert(b.mask.end(), s.attention_mask.begin(), s.attention_mask.end());
    }
    return b;
}

Tensor init_weight(ParameterStore& store, const std::string& name,
                   std::vector<std::int64_t> shape, Rng& rng, float stddev) {
    Tensor t = Tensor::zeros(shape);
    rng.fill_trunc_normal(t.data(), stddev);
    return store.add(name, t);
}

Tensor init_zeros(ParameterStore& store, const std::string& name,
                  std::vector<std::int64_t> shape) {
    return store.add(name, Tensor::zeros(std::move(shape)));
}

Tensor init_ones(ParameterStore& store, const std::string& name,
                 std::vector<std::int64_t> shape) {
    return store.add(name, Tensor::full(std::move(shape), 1.f));
}

EmbeddingTables make_embedding_tables(ParameterStore& store, const std::string& prefix,
                                      int vocab, int max_positions, int num_segments, int hidden,
                                      Rng& rng) {
    EmbeddingTables t;
    t.token = init_weight(store, prefix + "token", {vocab, hidden}, rng);
    t.position = init_weight(store, prefix + "position", {max_positions, hidden}, rng);
    t.segment = init_weight(store, prefix + "segment", {num_segments, hidden}, rng);
    t.ln_gain = init_ones(store, prefix + "ln_gain", {hidden});
    t.ln_bias = init_zeros(store, prefix + "ln_bias", {hidden});
    return t;
}

EncoderLayerWeights make_encoder_layer(ParameterStore& store, const std::string& prefix,
                                       int hidden, int intermediate, Rng& rng) {
    EncoderLayerWeights l;
    l.attn.wq = init_weight(store, prefix + "attn.wq", {hidden, hidden}, rng);
    l.attn.bq = init_zeros(store, prefix + "attn.bq", {hidden});
    l.attn.wk = init_weight(store, prefix + "attn.wk", {hidden, hidden}, rng);
    l.attn.bk = init_zeros(store, prefix + "attn.bk", {hidden});
    l.attn.wv = init_weight(store, prefix + "attn.wv", {hidden, hidden}, rng);
    l.attn.bv = init_zeros(store, prefix + "attn.bv", {hidden});
    l.attn.wo = init_weight(store, prefix + "attn.wo", {hidden, hidden}, rng);
    l.attn.bo = init_zeros(store, prefix + "attn.bo", {hidden});
    l.attn.ln_gain = init_ones(store, prefix + "attn.ln_gain", {hidden});
    l.attn.ln_bias = init_zeros(store, prefix + "attn.ln_bias", {hidden});
    l.ffn.w_in = init_weight(store, prefix + "ffn.w_in", {hidden, intermediate}, rng);
    l.ffn.b_in = init_zeros(store, prefix + "ffn.b_in", {intermediate});
    l.ffn.w_out = init_weight(store, prefix + "ffn.w_out", {intermediate, hidden}, rng);
    l.ffn.b_out = init_zeros(store, prefix + "ffn.b_out", {hidden});
    l.ffn.ln_gain = init_ones(store, prefix + "ffn.ln_gain", {hidden});
    l.ffn.ln_bias = init_zeros(store, prefix + "ffn.ln_bias", {hidden});
    return l;
}

Tensor self_attention(const Tensor& x, const std::vector<std::uint8_t>& mask,
                      const AttentionWeights& w, int num_heads) {
    const std::int64_t hidden = x.dim(-1);
    const std::int64_t dh = hidden / num_heads;
    Tensor q = split_heads(add_bias(matmul(x, w.wq), w.bq), num_heads);
    Tensor k = split_heads(add_bias(matmul(x, w.wk), w.bk), num_heads);
    Tensor v = split_heads(add_bias(matmul(x, w.wv), w.bv), num_heads);
    Tensor scores = scale(matmul_nt(q, k), 1.f / std::sqrt(static_cast<float>(dh)));
    scores = add_key_mask(scores, mask, num_heads);
    Tensor attn = softmax(scores, -1);
    Tensor ctx = join_heads(matmul(attn, v), num_heads);
    Tensor proj = add_bias(matmul(ctx, w.wo), w.bo);
    return layernorm(add(x, proj), w.ln_gain, w.ln_bias);
}

Tensor feed_forward(const Tensor& x, const FfnWeights& w) {
    Tensor h = gelu(add_bias(matmul(x, w.w_in), w.b_in));
    Tensor o = add_bias(matmul(h, w.w_out), w.b_out);
    return layernorm(add(x, o), w.ln_gain, w.ln_bias);
}

Tensor embed_tokens(const TokenBatch& batch, const EmbeddingTables& tables) {
    const std::int64_t b = batch.batch, s = batch.seq_len;
    const std::int64_t max_pos = tables.position.dim(0);
    if (s > max_pos)
        throw ConfigError("sequence length " + std::to_string(s) + " exceeds position table of " +
                          std::to_string(max_pos));
    Tensor tok = embedding(tables.token, batch.token_ids, {b, s});
    std::vector<std::int32_t> pos_ids(b * s);
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t t = 0; t < s; ++t) pos_ids[i * s + t] = static_cast<std::int32_t>(t);
    Tensor pos = embedding(tables.position, pos_ids, {b, s});
    Tensor seg = embedding(tables.segment, batch.segment_ids, {b, s});
    Tensor summed = add(add(tok, pos), seg);
    return layernorm(summed, tables.ln_gain, tables.ln_bias);
}

TransformerEncoder::TransformerEncoder(const TransformerConfig& cfg, ParameterStore& store,
                                       const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
    cfg_.validate();
    emb_ = make_embedding_tables(store, prefix + "embeddings.", cfg_.vocab_size,
                                 cfg_.max_sequence_length, cfg_.num_segment_types,
                                 cfg_.hidden_size, rng);
    layers_.reserve(cfg_.num_layers);
    for (int i = 0; i < cfg_.num_layers; ++i)
        layers_.push_back(make_encoder_layer(store, prefix + "layer" + std::to_string(i) + ".",
                                             cfg_.hidden_size, cfg_.intermediate_size, rng));
}

Tensor TransformerEncoder::embed(const TokenBatch& batch) const {
    return embed_tokens(batch, emb_);
}

Tensor TransformerEncoder::encode_embedded(const Tensor& x,
                                           const std::vector<std::uint8_t>& mask) const {
    Tensor h = x;
    for (const auto& layer : layers_) {
        h = self_attention(h, mask, layer.attn, cfg_.num_heads);
        h = feed_forward(h, layer.ffn);
    }
    return h;
}

EmbeddedSequence TransformerEncoder::forward(const TokenBatch& batch) const {
    Tensor x = embed(batch);
    return EmbeddedSequence{encode_embedded(x, batch.mask), batch.mask};
}

}  // namespace dipair
