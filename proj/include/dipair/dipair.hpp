#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "dipair/transformer.hpp"

// The DiPair architecture: dual encoder -> truncation -> projection ->
// merge -> head, plus the baseline students (DE-Cos, DE-FFNN, DiPairFFNN)
// expressed through the same config, and the cross-attention single-tower
// model used as teacher and as the joint-modeling baseline.
namespace dipair {

enum class HeadKind { Transformer, Ffnn, Cosine };
enum class TruncationSide { First, Last };
enum class Side { Left, Right };

const char* to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

struct DiPairConfig {
    // Encoder towers (K layers each, optionally weight-shared).
    int encoder_layers = 2;
    int encoder_hidden = 128;
    int encoder_heads = 2;
    int encoder_intermediate = 512;
    int vocab_size = 1024;
    int left_max_length = 32;    // padded input length, CLS included
    int right_max_length = 128;
    bool share_encoder_params = true;

    // Output-sequence truncation and per-side projection.
    int left_truncate = 4;   // N
    int right_truncate = 8;  // M
    int projection_dim = 64; // D; 0 = no projection
    TruncationSide truncation_side = TruncationSide::First;

    // Head. ffnn_dims are the hidden layer widths of the FFNN head.
    HeadKind head_kind = HeadKind::Transformer;
    int head_layers = 2;
    int head_heads = 1;
    int head_intermediate = 256;
    std::vector<int> ffnn_dims = {128, 128};
    int head_max_positions = 512;
    int head_num_segments = 2;

    // Per-part output lengths for n-ary scoring; empty means pair mode.
    std::vector<int> tuple_truncations;

    void validate() const;
    // Width of the blocks reaching the head: D, or encoder hidden if none.
    int head_width() const { return projection_dim > 0 ? projection_dim : encoder_hidden; }
    int merged_length() const { return left_truncate + right_truncate; }
};

std::string to_json_string(const DiPairConfig& cfg);
DiPairConfig dipair_config_from_json(const std::string& text);

// Pooled pair vector (head position-0 output) and the scalar logit,
// batch-shaped: vector [B, W], logit [B].
struct PairRepresentation {
    Tensor vector;
    Tensor logit;
};

class DiPairModel {
public:
    DiPairModel(const DiPairConfig& cfg, std::uint64_t seed);

    // Full-length encoder output over one side; never truncated here.
    // Overlength inputs are cut to the side's max length.
    EmbeddedSequence encode_side(const std::vector<TokenSequence>& texts, Side side) const;

    // First (or last) `count` rows, then the side's linear projection.
    Tensor truncate_project(const EmbeddedSequence& enc, int count, Side side) const;

    // Transformer-head input: concat, fresh position embeddings, per-block
    // segment embeddings, layernorm. Pair form assigns segments 0 and 1.
    EmbeddedSequence merge(const Tensor& left_block, const Tensor& right_block) const;
    EmbeddedSequence merge_blocks(const std::vector<Tensor>& blocks,
                                  const std::vector<int>& block_segments) const;

    // Transformer-head forward over a merged sequence.
    PairRepresentation head_forward(const EmbeddedSequence& merged) const;

    // End-to-end scoring; differentiable. Returns logits [B].
    Tensor score_batch(const std::vector<TokenSequence>& lefts,
                       const std::vector<TokenSequence>& rights) const;
    float score_pair(const TokenSequence& left, const TokenSequence& right) const;

    // n-ary generalization; parts[i] is the batch for tuple slot i.
    Tensor score_tuple_batch(const std::vector<std::vector<TokenSequence>>& parts) const;

    // Head-only scoring from precomputed truncated+projected blocks.
    Tensor score_from_blocks(const Tensor& left_block, const Tensor& right_block) const;

    const DiPairConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    std::int64_t head_param_count() const;

    // Instrumentation for the cache-path contract checks.
    std::uint64_t encoder_forward_count() const { return encoder_calls_; }
    std::uint64_t zero_norm_count() const { return zero_norm_scores_; }

private:
    Tensor project(const Tensor& block, Side side) const;
    Tensor head_from_blocks(const std::vector<Tensor>& blocks,
                            const std::vector<int>& block_segments) const;
    const TransformerEncoder& tower(Side side) const;

    DiPairConfig cfg_;
    ParameterStore params_;
    TransformerEncoder shared_encoder_, left_encoder_, right_encoder_;
    Tensor proj_left_w_, proj_left_b_, proj_right_w_, proj_right_b_;
    EmbeddingTables head_emb_;                  // transformer head only
    std::vector<EncoderLayerWeights> head_layers_;
    std::vector<std::pair<Tensor, Tensor>> ffnn_;  // weight, bias per layer
    Tensor cls_w_, cls_b_;
    mutable std::uint64_t encoder_calls_ = 0;
    mutable std::uint64_t zero_norm_scores_ = 0;
    mutable bool overlength_warned_ = false;
};

// Single tower over [CLS] left [SEP] right [SEP]: the joint-modeling
// baseline and the teacher shape.
class CrossAttentionModel {
public:
    CrossAttentionModel() = default;  // empty shell; assign before use
    CrossAttentionModel(const TransformerConfig& cfg, std::uint64_t seed);

    // Builds the joined padded sequence; the right side is truncated first
    // when the pair overflows the model's input length.
    TokenSequence join_pair(const std::vector<std::int32_t>& left_ids,
                            const std::vector<std::int32_t>& right_ids) const;

    Tensor score_batch(const std::vector<TokenSequence>& joined) const;
    float score_pair(const std::vector<std::int32_t>& left_ids,
                     const std::vector<std::int32_t>& right_ids) const;

    const TransformerConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

private:
    TransformerConfig cfg_;
    ParameterStore params_;
    TransformerEncoder encoder_;
    Tensor cls_w_, cls_b_;
};

std::int64_t count_params_with_prefix(const ParameterStore& store, const std::string& prefix);

// Checkpoint plus a JSON sidecar (<path>.json) carrying the architecture.
void save_dipair_model(const DiPairModel& model, const std::string& path);
DiPairModel load_dipair_model(const std::string& path);

std::string to_json_string(const TransformerConfig& cfg);
TransformerConfig transformer_config_from_json(const std::string& text);
void save_cross_attention_model(const CrossAttentionModel& model, const std::string& path);
CrossAttentionModel load_cross_attention_model(const std::string& path);

}  // namespace dipair
