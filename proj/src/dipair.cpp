#include "dipair/dipair.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dipair/checkpoint.hpp"
#include "dipair/errors.hpp"

namespace dipair {

const char* to_string(HeadKind k) {
    switch (k) {
        case HeadKind::Transformer: return "transformer";
        case HeadKind::Ffnn: return "ffnn";
        case HeadKind::Cosine: return "cosine";
    }
    return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
    if (s == "transformer") return HeadKind::Transformer;
    if (s == "ffnn") return HeadKind::Ffnn;
    if (s == "cosine") return HeadKind::Cosine;
    throw ConfigError("unknown head kind '" + s + "'");
}

void DiPairConfig::validate() const {
    if (left_truncate < 1 || left_truncate > left_max_length)
        throw ConfigError("left truncation " + std::to_string(left_truncate) +
                          " outside [1," + std::to_string(left_max_length) + "]");
    if (right_truncate < 1 || right_truncate > right_max_length)
        throw ConfigError("right truncation " + std::to_string(right_truncate) +
                          " outside [1," + std::to_string(right_max_length) + "]");
    if (projection_dim < 0) throw ConfigError("projection dim must be >= 0");
    if (head_kind == HeadKind::Transformer) {
        if (head_heads < 1 || head_width() % head_heads != 0)
            throw ConfigError("head width " + std::to_string(head_width()) +
                              " not divisible by head heads " + std::to_string(head_heads));
        if (merged_length() > head_max_positions)
            throw ConfigError("merged length exceeds head position table");
        if (head_num_segments < 2) throw ConfigError("head needs >= 2 segment types");
        if (head_layers < 0) throw ConfigError("head layers must be >= 0");
    }
    if (head_kind == HeadKind::Cosine && (left_truncate != 1 || right_truncate != 1))
        throw ConfigError("cosine head consumes CLS vectors only; set N = M = 1");
    for (int t : tuple_truncations)
        if (t < 1) throw ConfigError("tuple truncation lengths must be >= 1");
}

namespace {

TransformerConfig encoder_config(const DiPairConfig& cfg) {
    TransformerConfig tc;
    tc.num_layers = cfg.encoder_layers;
    tc.hidden_size = cfg.encoder_hidden;
    tc.num_heads = cfg.encoder_heads;
    tc.intermediate_size = cfg.encoder_intermediate;
    tc.max_sequence_length = std::max(cfg.left_max_length, cfg.right_max_length);
    tc.vocab_size = cfg.vocab_size;
    tc.num_segment_types = 2;
    return tc;
}

TokenSequence cut_to_length(const TokenSequence& seq, int max_len) {
    TokenSequence out = seq;
    out.token_ids.resize(max_len);
    out.segment_ids.resize(max_len);
    out.attention_mask.resize(max_len);
    return out;
}

}  // namespace

DiPairModel::DiPairModel(const DiPairConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const TransformerConfig enc_cfg = encoder_config(cfg_);
    if (cfg_.share_encoder_params) {
        shared_encoder_ = TransformerEncoder(enc_cfg, params_, "encoder.", rng);
    } else {
        left_encoder_ = TransformerEncoder(enc_cfg, params_, "encoder.left.", rng);
        right_encoder_ = TransformerEncoder(enc_cfg, params_, "encoder.right.", rng);
    }
    if (cfg_.projection_dim > 0) {
        const std::int64_t h = cfg_.encoder_hidden, d = cfg_.projection_dim;
        if (cfg_.share_encoder_params) {
            proj_left_w_ = init_weight(params_, "projection.weight", {h, d}, rng);
            proj_left_b_ = init_zeros(params_, "projection.bias", {d});
            proj_right_w_ = proj_left_w_;
            proj_right_b_ = proj_left_b_;
        } else {
            proj_left_w_ = init_weight(params_, "projection.left.weight", {h, d}, rng);
            proj_left_b_ = init_zeros(params_, "projection.left.bias", {d});
            proj_right_w_ = init_weight(params_, "projection.right.weight", {h, d}, rng);
            proj_right_b_ = init_zeros(params_, "projection.right.bias", {d});
        }
    }
    const int w = cfg_.head_width();
    if (cfg_.head_kind == HeadKind::Transformer) {
        head_emb_.position =
            init_weight(params_, "head.merge.position", {cfg_.head_max_positions, w}, rng);
        head_emb_.segment =
            init_weight(params_, "head.merge.segment", {cfg_.head_num_segments, w}, rng);
        head_emb_.ln_gain = init_ones(params_, "head.merge.ln_gain", {w});
        head_emb_.ln_bias = init_zeros(params_, "head.merge.ln_bias", {w});
        for (int i = 0; i < cfg_.head_layers; ++i)
            head_layers_.push_back(make_encoder_layer(params_,
                                                      "head.layer" + std::to_string(i) + ".", w,
                                                      cfg_.head_intermediate, rng));
        cls_w_ = init_weight(params_, "head.classifier.weight", {w, 1}, rng);
        cls_b_ = init_zeros(params_, "head.classifier.bias", {1});
    } else if (cfg_.head_kind == HeadKind::Ffnn) {
        std::int64_t in_dim = static_cast<std::int64_t>(cfg_.merged_length()) * w;
        for (std::size_t i = 0; i < cfg_.ffnn_dims.size(); ++i) {
            const std::int64_t out_dim = cfg_.ffnn_dims[i];
            ffnn_.emplace_back(
                init_weight(params_, "head.ffnn.layer" + std::to_string(i) + ".weight",
                            {in_dim, out_dim}, rng),
                init_zeros(params_, "head.ffnn.layer" + std::to_string(i) + ".bias", {out_dim}));
            in_dim = out_dim;
        }
        cls_w_ = init_weight(params_, "head.classifier.weight", {in_dim, 1}, rng);
        cls_b_ = init_zeros(params_, "head.classifier.bias", {1});
    }
    // Cosine head has no learned parameters past the encoders.
}

const TransformerEncoder& DiPairModel::tower(Side side) const {
    if (cfg_.share_encoder_params) return shared_encoder_;
    return side == Side::Left ? left_encoder_ : right_encoder_;
}

EmbeddedSequence DiPairModel::encode_side(const std::vector<TokenSequence>& texts,
                                          Side side) const {
    const int max_len = side == Side::Left ? cfg_.left_max_length : cfg_.right_max_length;
    std::vector<TokenSequence> fixed;
    const std::vector<TokenSequence>* use = &texts;
    for (const auto& t : texts) {
        if (static_cast<int>(t.length()) > max_len) {
            if (!overlength_warned_) {
                std::cerr << "dipair: truncating overlength input to " << max_len << " tokens\n";
                overlength_warned_ = true;
            }
            fixed.assign(texts.begin(), texts.end());
            break;
        }
    }
    if (!fixed.empty()) {
        for (auto& t : fixed)
            if (static_cast<int>(t.length()) > max_len) t = cut_to_length(t, max_len);
        use = &fixed;
    }
    ++encoder_calls_;
    return tower(side).forward(pack_batch(*use));
}

Tensor DiPairModel::project(const Tensor& block, Side side) const {
    if (cfg_.projection_dim <= 0) return block;
    const Tensor& w = side == Side::Left ? proj_left_w_ : proj_right_w_;
    const Tensor& b = side == Side::Left ? proj_left_b_ : proj_right_b_;
    return add_bias(matmul(block, w), b);
}

Tensor DiPairModel::truncate_project(const EmbeddedSequence& enc, int count, Side side) const {
    const std::int64_t s = enc.embeddings.dim(-2);
    if (count > s)
        throw ConfigError("truncation length " + std::to_string(count) +
                          " exceeds sequence length " + std::to_string(s));
    const std::int64_t start = cfg_.truncation_side == TruncationSide::First ? 0 : s - count;
    return project(slice_rows(enc.embeddings, start, count), side);
}

EmbeddedSequence DiPairModel::merge(const Tensor& left_block, const Tensor& right_block) const {
    return merge_blocks({left_block, right_block}, {0, 1});
}

EmbeddedSequence DiPairModel::merge_blocks(const std::vector<Tensor>& blocks,
                                           const std::vector<int>& block_segments) const {
    if (cfg_.head_kind != HeadKind::Transformer)
        throw ConfigError("merge with embeddings is a transformer-head stage");
    if (blocks.size() != block_segments.size() || blocks.empty())
        throw ConfigError("merge needs one segment id per block");
    const std::int64_t d = blocks[0].dim(-1);
    Tensor cat = blocks[0];
    for (std::size_t i = 1; i < blocks.size(); ++i) {
        if (blocks[i].dim(-1) != d)
            throw ConfigError("merge blocks disagree on width: " + std::to_string(d) + " vs " +
                              std::to_string(blocks[i].dim(-1)));
        cat = concat_rows(cat, blocks[i]);
    }
    const std::int64_t total = cat.dim(-2);
    if (cat.rank() == 2) cat = reshape(cat, {1, total, d});
    const std::int64_t batch = cat.dim(0);
    std::vector<std::int32_t> seg_per_row(total);
    std::int64_t row = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (block_segments[i] < 0 || block_segments[i] >= cfg_.head_num_segments)
            throw ConfigError("segment id " + std::to_string(block_segments[i]) +
                              " outside head segment table");
        for (std::int64_t r = 0; r < blocks[i].dim(-2); ++r)
            seg_per_row[row++] = static_cast<std::int32_t>(block_segments[i]);
    }
    std::vector<std::int32_t> pos_ids(batch * total), seg_ids(batch * total);
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t t = 0; t < total; ++t) {
            pos_ids[b * total + t] = static_cast<std::int32_t>(t);
            seg_ids[b * total + t] = seg_per_row[t];
        }
    Tensor pos = embedding(head_emb_.position, pos_ids, {batch, total});
    Tensor seg = embedding(head_emb_.segment, seg_ids, {batch, total});
    Tensor out = layernorm(add(add(cat, pos), seg), head_emb_.ln_gain, head_emb_.ln_bias);
    return EmbeddedSequence{out, std::vector<std::uint8_t>(batch * total, 1)};
}

PairRepresentation DiPairModel::head_forward(const EmbeddedSequence& merged) const {
    if (cfg_.head_kind != HeadKind::Transformer)
        throw ConfigError("head_forward over a merged sequence needs a transformer head");
    Tensor h = merged.embeddings;
    for (const auto& layer : head_layers_) {
        h = self_attention(h, merged.mask, layer.attn, cfg_.head_heads);
        h = feed_forward(h, layer.ffn);
    }
    const std::int64_t batch = h.dim(0), w = h.dim(-1);
    Tensor pooled = reshape(slice_rows(h, 0, 1), {batch, w});
    Tensor logit = reshape(add_bias(matmul(pooled, cls_w_), cls_b_), {batch});
    return PairRepresentation{pooled, logit};
}

Tensor DiPairModel::head_from_blocks(const std::vector<Tensor>& blocks,
                                     const std::vector<int>& block_segments) const {
    switch (cfg_.head_kind) {
        case HeadKind::Transformer:
            return head_forward(merge_blocks(blocks, block_segments)).logit;
        case HeadKind::Ffnn: {
            Tensor cat = blocks[0];
            for (std::size_t i = 1; i < blocks.size(); ++i) cat = concat_rows(cat, blocks[i]);
            const std::int64_t batch = cat.rank() == 3 ? cat.dim(0) : 1;
            Tensor h = reshape(cat, {batch, cat.size() / batch});
            for (const auto& [w, b] : ffnn_) h = gelu(add_bias(matmul(h, w), b));
            return reshape(add_bias(matmul(h, cls_w_), cls_b_), {batch});
        }
        case HeadKind::Cosine: {
            if (blocks.size() != 2) throw ConfigError("cosine head is pairwise only");
            const std::int64_t batch = blocks[0].rank() == 3 ? blocks[0].dim(0) : 1;
            const std::int64_t d = blocks[0].dim(-1);
            Tensor a = reshape(slice_rows(blocks[0], 0, 1), {batch, d});
            Tensor b = reshape(slice_rows(blocks[1], 0, 1), {batch, d});
            for (std::int64_t i = 0; i < batch; ++i) {
                float na = 0.f, nb = 0.f;
                for (std::int64_t j = 0; j < d; ++j) {
                    na += a.data()[i * d + j] * a.data()[i * d + j];
                    nb += b.data()[i * d + j] * b.data()[i * d + j];
                }
                if (na < 1e-12f || nb < 1e-12f) {
                    ++zero_norm_scores_;
                    std::cerr << "dipair: zero-norm vector in cosine head, scoring 0\n";
                }
            }
            return cosine_rows(a, b);
        }
    }
    throw ConfigError("unreachable head kind");
}

Tensor DiPairModel::score_batch(const std::vector<TokenSequence>& lefts,
                                const std::vector<TokenSequence>& rights) const {
    if (lefts.size() != rights.size()) throw ContractError("left/right batch sizes disagree");
    EmbeddedSequence enc_l = encode_side(lefts, Side::Left);
    EmbeddedSequence enc_r = encode_side(rights, Side::Right);
    Tensor bl = truncate_project(enc_l, cfg_.left_truncate, Side::Left);
    Tensor br = truncate_project(enc_r, cfg_.right_truncate, Side::Right);
    return head_from_blocks({bl, br}, {0, 1});
}

float DiPairModel::score_pair(const TokenSequence& left, const TokenSequence& right) const {
    NoGradGuard ng;
    return score_batch({left}, {right}).data()[0];
}

Tensor DiPairModel::score_tuple_batch(
    const std::vector<std::vector<TokenSequence>>& parts) const {
    const int n = static_cast<int>(parts.size());
    if (n < 2) throw ConfigError("tuple scoring needs n >= 2 parts");
    if (n == 2) return score_batch(parts[0], parts[1]);
    if (!cfg_.share_encoder_params)
        throw ConfigError("n-ary scoring requires shared encoder parameters");
    if (static_cast<int>(cfg_.tuple_truncations.size()) != n)
        throw ConfigError("configure one tuple truncation length per part, got " +
                          std::to_string(cfg_.tuple_truncations.size()) + " for n=" +
                          std::to_string(n));
    if (cfg_.head_kind == HeadKind::Cosine) throw ConfigError("cosine head is pairwise only");
    if (cfg_.head_kind == HeadKind::Transformer && cfg_.head_num_segments < n)
        throw ConfigError("head segment table smaller than tuple arity");
    std::vector<Tensor> blocks;
    std::vector<int> segments;
    for (int i = 0; i < n; ++i) {
        const Side side = i == 0 ? Side::Left : Side::Right;
        EmbeddedSequence enc = encode_side(parts[i], side);
        blocks.push_back(truncate_project(enc, cfg_.tuple_truncations[i], side));
        segments.push_back(i);
    }
    return head_from_blocks(blocks, segments);
}

Tensor DiPairModel::score_from_blocks(const Tensor& left_block, const Tensor& right_block) const {
    return head_from_blocks({left_block, right_block}, {0, 1});
}

std::int64_t DiPairModel::head_param_count() const {
    return count_params_with_prefix(params_, "head.");
}

std::int64_t count_params_with_prefix(const ParameterStore& store, const std::string& prefix) {
    std::int64_t n = 0;
    for (const auto& p : store.all())
        if (p.name.rfind(prefix, 0) == 0) n += p.tensor.size();
    return n;
}

// ---- cross-attention tower ----

CrossAttentionModel::CrossAttentionModel(const TransformerConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    encoder_ = TransformerEncoder(cfg_, params_, "encoder.", rng);
    cls_w_ = init_weight(params_, "classifier.weight", {cfg_.hidden_size, 1}, rng);
    cls_b_ = init_zeros(params_, "classifier.bias", {1});
}

TokenSequence CrossAttentionModel::join_pair(const std::vector<std::int32_t>& left_ids,
                                             const std::vector<std::int32_t>& right_ids) const {
    const int max_len = cfg_.max_sequence_length;
    // [CLS] left [SEP] right [SEP]; the right side is truncated first.
    std::int64_t fixed = 3 + static_cast<std::int64_t>(left_ids.size());
    std::vector<std::int32_t> left = left_ids, right = right_ids;
    if (fixed > max_len) {
        left.resize(std::max<std::int64_t>(0, max_len - 3));
        fixed = 3 + static_cast<std::int64_t>(left.size());
    }
    const std::int64_t right_room = max_len - fixed;
    if (static_cast<std::int64_t>(right.size()) > right_room)
        right.resize(std::max<std::int64_t>(0, right_room));

    TokenSequence seq;
    seq.token_ids.reserve(max_len);
    seq.token_ids.push_back(tokens::kCls);
    seq.token_ids.insert(seq.token_ids.end(), left.begin(), left.end());
    seq.token_ids.push_back(tokens::kSep);
    const std::size_t seg_boundary = seq.token_ids.size();
    seq.token_ids.insert(seq.token_ids.end(), right.begin(), right.end());
    seq.token_ids.push_back(tokens::kSep);
    const std::size_t real = seq.token_ids.size();
    seq.token_ids.resize(max_len, tokens::kPad);
    seq.segment_ids.assign(max_len, 0);
    for (std::size_t i = seg_boundary; i < real; ++i) seq.segment_ids[i] = 1;
    seq.attention_mask.assign(max_len, 0);
    for (std::size_t i = 0; i < real; ++i) seq.attention_mask[i] = 1;
    return seq;
}

Tensor CrossAttentionModel::score_batch(const std::vector<TokenSequence>& joined) const {
    EmbeddedSequence enc = encoder_.forward(pack_batch(joined));
    const std::int64_t batch = enc.embeddings.dim(0);
    Tensor pooled = reshape(slice_rows(enc.embeddings, 0, 1), {batch, cfg_.hidden_size});
    return reshape(add_bias(matmul(pooled, cls_w_), cls_b_), {batch});
}

float CrossAttentionModel::score_pair(const std::vector<std::int32_t>& left_ids,
                                      const std::vector<std::int32_t>& right_ids) const {
    NoGradGuard ng;
    return score_batch({join_pair(left_ids, right_ids)}).data()[0];
}

// ---- serialization ----

namespace {

using nlohmann::json;

json config_to_json(const DiPairConfig& c) {
    return json{{"encoder_layers", c.encoder_layers},
                {"encoder_hidden", c.encoder_hidden},
                {"encoder_heads", c.encoder_heads},
                {"encoder_intermediate", c.encoder_intermediate},
                {"vocab_size", c.vocab_size},
                {"left_max_length", c.left_max_length},
                {"right_max_length", c.right_max_length},
                {"share_encoder_params", c.share_encoder_params},
                {"left_truncate", c.left_truncate},
                {"right_truncate", c.right_truncate},
                {"projection_dim", c.projection_dim},
                {"truncation_side", c.truncation_side == TruncationSide::First ? "first" : "last"},
                {"head_kind", to_string(c.head_kind)},
                {"head_layers", c.head_layers},
                {"head_heads", c.head_heads},
                {"head_intermediate", c.head_intermediate},
                {"ffnn_dims", c.ffnn_dims},
                {"head_max_positions", c.head_max_positions},
                {"head_num_segments", c.head_num_segments},
                {"tuple_truncations", c.tuple_truncations}};
}

DiPairConfig config_from_json(const json& j) {
    DiPairConfig c;
    c.encoder_layers = j.at("encoder_layers");
    c.encoder_hidden = j.at("encoder_hidden");
    c.encoder_heads = j.at("encoder_heads");
    c.encoder_intermediate = j.at("encoder_intermediate");
    c.vocab_size = j.at("vocab_size");
    c.left_max_length = j.at("left_max_length");
    c.right_max_length = j.at("right_max_length");
    c.share_encoder_params = j.at("share_encoder_params");
    c.left_truncate = j.at("left_truncate");
    c.right_truncate = j.at("right_truncate");
    c.projection_dim = j.at("projection_dim");
    c.truncation_side =
        j.at("truncation_side") == "last" ? TruncationSide::Last : TruncationSide::First;
    c.head_kind = head_kind_from_string(j.at("head_kind"));
    c.head_layers = j.at("head_layers");
    c.head_heads = j.at("head_heads");
    c.head_intermediate = j.at("head_intermediate");
    c.ffnn_dims = j.at("ffnn_dims").get<std::vector<int>>();
    c.head_max_positions = j.at("head_max_positions");
    c.head_num_segments = j.at("head_num_segments");
    c.tuple_truncations = j.at("tuple_truncations").get<std::vector<int>>();
    return c;
}

json transformer_to_json(const TransformerConfig& c) {
    return json{{"num_layers", c.num_layers},
                {"hidden_size", c.hidden_size},
                {"num_heads", c.num_heads},
                {"intermediate_size", c.intermediate_size},
                {"max_sequence_length", c.max_sequence_length},
                {"vocab_size", c.vocab_size},
                {"num_segment_types", c.num_segment_types}};
}

TransformerConfig transformer_from_json(const json& j) {
    TransformerConfig c;
    c.num_layers = j.at("num_layers");
    c.hidden_size = j.at("hidden_size");
    c.num_heads = j.at("num_heads");
    c.intermediate_size = j.at("intermediate_size");
    c.max_sequence_length = j.at("max_sequence_length");
    c.vocab_size = j.at("vocab_size");
    c.num_segment_types = j.at("num_segment_types");
    return c;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << text;
}

std::string read_text(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

std::string to_json_string(const DiPairConfig& cfg) { return config_to_json(cfg).dump(2); }

DiPairConfig dipair_config_from_json(const std::string& text) {
    return config_from_json(json::parse(text));
}

std::string to_json_string(const TransformerConfig& cfg) {
    return transformer_to_json(cfg).dump(2);
}

TransformerConfig transformer_config_from_json(const std::string& text) {
    return transformer_from_json(json::parse(text));
}

void save_dipair_model(const DiPairModel& model, const std::string& path) {
    save_checkpoint(model.params(), path);
    json sidecar{{"model_kind", "dipair"}, {"config", config_to_json(model.config())}};
    write_text(path + ".json", sidecar.dump(2));
}

DiPairModel load_dipair_model(const std::string& path) {
    const json sidecar = json::parse(read_text(path + ".json"));
    if (sidecar.at("model_kind") != "dipair")
        throw FormatError(path + " is not a dipair checkpoint");
    DiPairModel model(config_from_json(sidecar.at("config")), /*seed=*/0);
    load_checkpoint(model.params(), path);
    return model;
}

void save_cross_attention_model(const CrossAttentionModel& model, const std::string& path) {
    save_checkpoint(model.params(), path);
    json sidecar{{"model_kind", "cross_attention"},
                 {"config", transformer_to_json(model.config())}};
    write_text(path + ".json", sidecar.dump(2));
}

CrossAttentionModel load_cross_attention_model(const std::string& path) {
    const json sidecar = json::parse(read_text(path + ".json"));
    if (sidecar.at("model_kind") != "cross_attention")
        throw FormatError(path + " is not a cross-attention checkpoint");
    CrossAttentionModel model(transformer_from_json(sidecar.at("config")), /*seed=*/0);
    load_checkpoint(model.params(), path);
    return model;
}

}  // namespace dipair
