#pragma once
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dipair/data.hpp"
#include "dipair/dipair.hpp"

// Serving-side cache: truncated+projected embedding blocks persisted per
// unique text, so scoring a pair runs only the head.
namespace dipair {

// File layout, little-endian: magic "DPEC", version u32, side u8, rows u32,
// dim u32, then appended records of (id i64, rows*dim float32). The id ->
// offset index is rebuilt by scanning at open; a trailing partial record is
// a format error, an unknown id a lookup error.
class EmbeddingStore {
public:
    static EmbeddingStore create(const std::string& path, Side side, int rows, int dim);
    static EmbeddingStore open(const std::string& path);

    void append(std::int64_t id, const std::vector<float>& block);
    bool contains(std::int64_t id) const { return index_.count(id) > 0; }
    std::vector<float> fetch(std::int64_t id) const;

    Side side() const { return side_; }
    int rows() const { return rows_; }
    int dim() const { return dim_; }
    std::size_t size() const { return index_.size(); }
    std::size_t block_bytes() const {
        return static_cast<std::size_t>(rows_) * dim_ * sizeof(float);
    }
    const std::string& path() const { return path_; }

    std::uint64_t fetch_count() const { return fetches_; }
    void reset_fetch_count() { fetches_ = 0; }

private:
    EmbeddingStore() = default;
    std::string path_;
    Side side_ = Side::Left;
    int rows_ = 0, dim_ = 0;
    std::unordered_map<std::int64_t, std::uint64_t> index_;  // id -> payload offset
    mutable std::uint64_t fetches_ = 0;
};

// Encodes, truncates and projects every unique text and appends its block.
// Re-adding an id with identical tokens is a no-op; with different tokens a
// conflict error.
EmbeddingStore build_store(const DiPairModel& model,
                           const std::vector<std::pair<std::int64_t, TokenSequence>>& texts,
                           Side side, const std::string& path, int batch = 64);

// merge + head only; no encoder involvement.
float score_cached(const DiPairModel& model, const EmbeddingStore& left_store,
                   const EmbeddingStore& right_store, std::int64_t left_id,
                   std::int64_t right_id);

// Batched cached scoring; each distinct id is fetched once per batch.
std::vector<float> score_cached_batch(const DiPairModel& model, const EmbeddingStore& left_store,
                                      const EmbeddingStore& right_store,
                                      const std::vector<std::pair<std::int64_t, std::int64_t>>& pairs);

// ---- cost model ----

// Closed-form multiply-accumulate counts. Per transformer layer at sequence
// length S, hidden H, intermediate I: 4*S*H^2 (QKVO projections) +
// 2*S^2*H (attention matrices) + 2*S*H*I (FFN). Softmax, layernorm, GELU
// and embedding lookups carry no MACs by convention.
std::uint64_t transformer_layer_macs(std::int64_t seq_len, std::int64_t hidden,
                                     std::int64_t intermediate);

struct FlopInputs {
    int teacher_layers = 4;
    int teacher_seq_len = 128;
    int teacher_hidden = 128;
    int teacher_intermediate = 512;
    DiPairConfig student;
    int left_len = 0;   // padded encoder input lengths; 0 = student max
    int right_len = 0;
};

struct FlopReport {
    std::uint64_t teacher_encoder = 0;
    std::uint64_t teacher_classifier = 0;
    std::uint64_t teacher_total = 0;
    std::uint64_t student_encoder = 0;
    std::uint64_t student_projection = 0;
    std::uint64_t student_head = 0;  // head classifier included
    std::uint64_t student_pair_total = 0;   // head path only (cached serving)
    std::uint64_t student_end_to_end = 0;
    double speedup = 0.0;  // teacher_total / student_pair_total

    std::string to_json_string() const;
};

FlopReport flop_estimate(const FlopInputs& in);

// Instrumented per-pair MAC counts from the kernel counter, for checking
// the closed-form estimate against what the forward passes actually do.
std::uint64_t instrumented_cross_macs(const CrossAttentionModel& model,
                                      const std::vector<PairExample>& pairs);
std::uint64_t instrumented_cached_macs(const DiPairModel& model, const EmbeddingStore& left_store,
                                       const EmbeddingStore& right_store,
                                       const std::vector<std::pair<std::int64_t, std::int64_t>>& pairs);
std::uint64_t instrumented_end_to_end_macs(const DiPairModel& model,
                                           const std::vector<PairExample>& pairs);

// ---- latency ----

struct PathTiming {
    double median_us_per_pair = 0.0;
    double p95_us_per_pair = 0.0;
};

struct LatencyReport {
    PathTiming cross_attention;
    PathTiming dipair_end_to_end;
    PathTiming dipair_cached;
    double measured_speedup = 0.0;  // cross / cached, by median
    int repetitions = 0;
    int batch_size = 0;

    std::string to_json_string() const;
};

// Single-threaded wall-clock comparison of (a) the full cross-attention
// path, (b) DiPair end to end, and (c) cached-head scoring, over the given
// pairs. Three warmup repetitions are always run and excluded.
LatencyReport benchmark_latency(const CrossAttentionModel& cross, const DiPairModel& student,
                                const std::vector<PairExample>& pairs, int repetitions,
                                const std::string& store_dir, int batch_size = 16);

}  // namespace dipair
