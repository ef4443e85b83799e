#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "dipair/transformer.hpp"

// Synthetic facet-matching pair task. Right texts are sequences of
// attribute-value runs ("facets"); left texts query one or two facets.
// Relevance needs the attribute-value association, not token overlap, so
// independently encoded sides with a cosine on top cannot solve it while a
// joint model can.
namespace dipair {

struct PairExample {
    std::int64_t id = 0;
    std::vector<std::int32_t> left;
    std::vector<std::int32_t> right;
    float label = -1.f;       // graded hard label in [0,1]; < 0 = absent
    float soft_label = -1.f;  // teacher annotation; < 0 = absent

    bool has_label() const { return label >= 0.f; }
    bool has_soft_label() const { return soft_label >= 0.f; }
    bool binary_label() const { return label >= 0.5f; }
};

struct DatasetSizes {
    std::int64_t train = 20000;
    std::int64_t valid = 2000;
    std::int64_t test = 2000;
    std::int64_t distill = 400000;  // kept >= 20x train
};

struct GeneratorConfig {
    DatasetSizes sizes;
    int vocab_size = 512;
    int max_left = 16;    // raw token budget per side, CLS excluded
    int max_right = 128;
    int min_facets = 3;
    int max_facets = 6;
    int min_values = 2;
    int max_values = 4;
    double p_match = 0.4;      // full facet match, label 1.0
    double p_confusion = 0.3;  // value under the wrong facet, label 0.2
    double p_two_query = 0.3;  // query two facets of the same kind
};

struct DatasetBundle {
    std::vector<PairExample> train, valid, test, distill;
};

// Token-id layout: ids below tokens::kFirstContent are reserved; the next
// `attribute_count` ids are facet attributes; the rest are values.
int attribute_count(int vocab_size);
bool is_attribute(std::int32_t id, int vocab_size);

// The labeling rule, recomputable from the tokens alone: per queried facet,
// 1.0 when the attribute holds all queried values in the right text, 0.2
// when a queried value appears under a different attribute, 0.0 otherwise;
// queried facets average.
float facet_label(const std::vector<std::int32_t>& left, const std::vector<std::int32_t>& right,
                  int vocab_size);

// Deterministic in the seed. Splits get disjoint ids; the distillation
// split carries no hard labels.
DatasetBundle generate(std::uint64_t seed, const GeneratorConfig& cfg);

// CLS-prefixed right-padded tower input; segment ids are all zero.
TokenSequence to_token_sequence(const std::vector<std::int32_t>& ids, int max_raw_len);
std::pair<TokenSequence, TokenSequence> to_token_sequences(const PairExample& ex, int max_left,
                                                           int max_right);
// Inverse of to_token_sequence: strips CLS and padding.
std::vector<std::int32_t> strip_special(const TokenSequence& seq);

// Newline-delimited JSON: {id, left, right, label}; soft-label annotations
// are appended as {id, soft_label} records and merged on read.
void write_dataset(const std::vector<PairExample>& examples, const std::string& path);
std::vector<PairExample> load_dataset(const std::string& path);
void append_annotations(const std::vector<PairExample>& examples, const std::string& path);

std::string to_json_string(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const std::string& text);

}  // namespace dipair
