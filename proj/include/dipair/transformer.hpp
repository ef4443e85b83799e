#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "dipair/optimizer.hpp"
#include "dipair/rng.hpp"
#include "dipair/tensor.hpp"

// BERT-style encoder building blocks: embeddings with layernorm, multi-head
// self-attention with padding masks, GELU feed-forward sublayers, and the
// layer stack. Post-layernorm ordering throughout.
namespace dipair {

// Reserved token ids; generated vocabularies start above these.
namespace tokens {
constexpr std::int32_t kPad = 0;
constexpr std::int32_t kCls = 1;
constexpr std::int32_t kSep = 2;
constexpr std::int32_t kUnk = 3;
constexpr std::int32_t kFirstContent = 4;
}  // namespace tokens

struct TransformerConfig {
    int num_layers = 2;
    int hidden_size = 128;
    int num_heads = 2;
    int intermediate_size = 512;
    int max_sequence_length = 128;
    int vocab_size = 1024;
    int num_segment_types = 2;

    void validate() const;
};

// One padded input sequence: CLS first, right padding only.
struct TokenSequence {
    std::vector<std::int32_t> token_ids;
    std::vector<std::int32_t> segment_ids;
    std::vector<std::uint8_t> attention_mask;  // 1 = real token, 0 = padding

    std::size_t length() const { return token_ids.size(); }
};

// Throws ContractError unless lengths agree, CLS sits at position 0 and the
// mask is a prefix of ones.
void validate_token_sequence(const TokenSequence& seq);

// Column-packed batch of equal-length sequences.
struct TokenBatch {
    std::int64_t batch = 0;
    std::int64_t seq_len = 0;
    std::vector<std::int32_t> token_ids;
    std::vector<std::int32_t> segment_ids;
    std::vector<std::uint8_t> mask;
};

TokenBatch pack_batch(const std::vector<TokenSequence>& seqs);

// Encoder output with the mask it was computed under.
struct EmbeddedSequence {
    Tensor embeddings;               // [B, S, H]
    std::vector<std::uint8_t> mask;  // B * S
};

struct AttentionWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln_gain, ln_bias;
};

struct FfnWeights {
    Tensor w_in, b_in, w_out, b_out;
    Tensor ln_gain, ln_bias;
};

struct EncoderLayerWeights {
    AttentionWeights attn;
    FfnWeights ffn;
};

struct EmbeddingTables {
    Tensor token, position, segment;
    Tensor ln_gain, ln_bias;
};

Tensor self_attention(const Tensor& x, const std::vector<std::uint8_t>& mask,
                      const AttentionWeights& w, int num_heads);
Tensor feed_forward(const Tensor& x, const FfnWeights& w);

// Token/position/segment embedding tables plus a layer stack, with all
// parameters registered under `prefix` in the shared store.
class TransformerEncoder {
public:
    TransformerEncoder() = default;
    TransformerEncoder(const TransformerConfig& cfg, ParameterStore& store,
                       const std::string& prefix, Rng& rng);

    // embed(): row t = token[id_t] + position[t] + segment[seg_t], layernormed.
    Tensor embed(const TokenBatch& batch) const;
    // Applies the layer stack on an already-embedded input.
    Tensor encode_embedded(const Tensor& x, const std::vector<std::uint8_t>& mask) const;
    EmbeddedSequence forward(const TokenBatch& batch) const;

    const TransformerConfig& config() const { return cfg_; }

private:
    TransformerConfig cfg_;
    EmbeddingTables emb_;
    std::vector<EncoderLayerWeights> layers_;
};

// Standalone embed over explicit tables (position rows taken 0..S).
Tensor embed_tokens(const TokenBatch& batch, const EmbeddingTables& tables);

// Truncated-normal(0.02) matrix parameter; biases and layernorm use
// zeros / ones as usual.
Tensor init_weight(ParameterStore& store, const std::string& name,
                   std::vector<std::int64_t> shape, Rng& rng, float stddev = 0.02f);
Tensor init_zeros(ParameterStore& store, const std::string& name,
                  std::vector<std::int64_t> shape);
Tensor init_ones(ParameterStore& store, const std::string& name,
                 std::vector<std::int64_t> shape);

EmbeddingTables make_embedding_tables(ParameterStore& store, const std::string& prefix,
                                      int vocab, int max_positions, int num_segments, int hidden,
                                      Rng& rng);
EncoderLayerWeights make_encoder_layer(ParameterStore& store, const std::string& prefix,
                                       int hidden, int intermediate, Rng& rng);

}  // namespace dipair
